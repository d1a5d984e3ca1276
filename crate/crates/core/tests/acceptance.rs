use pogm::acceptance::run_all;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let outcomes = run_all(dir.path()).unwrap();
    for o in &outcomes {
        println!("{o}");
    }
    assert_eq!(outcomes.len(), 12);
    let failed: Vec<_> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
