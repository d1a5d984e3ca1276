//! Seeded synthetic multi-domain datasets, splitting, and mini-batch sampling.
//!
//! Three generators are provided:
//! - rotated two moons: one shared base sample rotated per domain (covariate
//!   shift by rotation);
//! - spurious color: a noisy core feature plus a binary "color" feature whose
//!   agreement with the label varies per domain;
//! - linear regression domains: a shared invariant coefficient vector plus
//!   per-domain coefficients on spurious coordinates.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};

use crate::error::{PogmError, Result};
use crate::matrix::Matrix;
use crate::model::{Batch, Targets};
use crate::rng::{self, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub domain_id: usize,
    pub features: Matrix,
    pub labels: Targets,
    pub meta: BTreeMap<String, Value>,
}

impl DomainDataset {
    pub fn new(
        domain_id: usize,
        features: Matrix,
        labels: Targets,
        meta: BTreeMap<String, Value>,
    ) -> Result<Self> {
        if features.rows() == 0 {
            return Err(PogmError::Empty("domain dataset"));
        }
        if !features.is_finite() {
            return Err(PogmError::InvalidArgument(format!(
                "domain {domain_id} has non-finite features"
            )));
        }
        let n_labels = match &labels {
            Targets::Classes(c) => c.len(),
            Targets::Reals(r) => r.len(),
        };
        if n_labels != features.rows() {
            return Err(PogmError::Dimension {
                expected: features.rows(),
                got: n_labels,
            });
        }
        Ok(Self {
            domain_id,
            features,
            labels,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn as_batch(&self) -> Batch {
        Batch {
            features: self.features.clone(),
            targets: self.labels.clone(),
        }
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        self.as_batch().select(idx)
    }

    fn subset(&self, idx: &[usize]) -> DomainDataset {
        let b = self.batch(idx);
        DomainDataset {
            domain_id: self.domain_id,
            features: b.features,
            labels: b.targets,
            meta: self.meta.clone(),
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.labels, Targets::Classes(_))
    }
}

/// Unrotated two-moons sample: `n - n/2` points on the upper moon (label 0),
/// `n/2` on the lower moon (label 1).
pub fn two_moons_base(n: usize, seed: u64) -> (Matrix, Vec<usize>) {
    let mut r = rng::stream(seed, Stream::Data, 0);
    let n1 = n / 2;
    let n0 = n - n1;
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = r.random_range(0.0..=std::f64::consts::PI);
        if i < n0 {
            data.extend_from_slice(&[t.cos(), t.sin()]);
            labels.push(0);
        } else {
            data.extend_from_slice(&[1.0 - t.cos(), 0.5 - t.sin()]);
            labels.push(1);
        }
    }
    (Matrix::new(n, 2, data).expect("shape"), labels)
}

pub fn rotate(point: [f64; 2], angle_deg: f64) -> [f64; 2] {
    let (s, c) = angle_deg.to_radians().sin_cos();
    [c * point[0] - s * point[1], s * point[0] + c * point[1]]
}

pub fn gen_rotated_two_moons(
    angles_deg: &[f64],
    n_per_domain: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<DomainDataset>> {
    if angles_deg.is_empty() {
        return Err(PogmError::Empty("angle list"));
    }
    if n_per_domain < 2 {
        return Err(PogmError::InvalidArgument("need at least 2 samples per domain".into()));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(PogmError::InvalidArgument(format!("noise_sd = {noise_sd}")));
    }
    let (base, labels) = two_moons_base(n_per_domain, seed);
    let noise = Normal::new(0.0, noise_sd).expect("valid sd");
    angles_deg
        .iter()
        .enumerate()
        .map(|(d, &angle)| {
            let mut r = rng::stream(seed, Stream::Noise, d as u64);
            let mut data = Vec::with_capacity(2 * n_per_domain);
            for i in 0..n_per_domain {
                let p = rotate([base.get(i, 0), base.get(i, 1)], angle);
                if noise_sd > 0.0 {
                    data.push(p[0] + noise.sample(&mut r));
                    data.push(p[1] + noise.sample(&mut r));
                } else {
                    data.extend_from_slice(&p);
                }
            }
            let meta = BTreeMap::from([
                ("generator".to_string(), json!("rotated_two_moons")),
                ("angle_deg".to_string(), json!(angle)),
                ("n".to_string(), json!(n_per_domain)),
                ("noise".to_string(), json!(noise_sd)),
                ("seed".to_string(), json!(seed)),
            ]);
            DomainDataset::new(
                d,
                Matrix::new(n_per_domain, 2, data)?,
                Targets::Classes(labels.clone()),
                meta,
            )
        })
        .collect()
}

/// Binary task with a core feature and a spurious "color" feature.
///
/// For each sample a latent class `z` (balanced) sets the core feature
/// `N(2z - 1, 1)`; the observed label is `z` flipped with probability
/// `label_noise`; the color is `2y - 1` with probability `corr`, otherwise its
/// negation. The number of flipped labels is stored in `meta["n_flipped"]`.
pub fn gen_spurious_color(
    corrs: &[f64],
    label_noise: f64,
    n_per_domain: usize,
    seed: u64,
) -> Result<Vec<DomainDataset>> {
    if corrs.is_empty() {
        return Err(PogmError::Empty("correlation list"));
    }
    if let Some(c) = corrs.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(PogmError::InvalidArgument(format!("correlation {c} outside [0, 1]")));
    }
    if !(0.0..0.5).contains(&label_noise) {
        return Err(PogmError::InvalidArgument(format!(
            "label_noise {label_noise} outside [0, 0.5)"
        )));
    }
    if n_per_domain == 0 {
        return Err(PogmError::InvalidArgument("n_per_domain must be >= 1".into()));
    }
    let unit = Normal::new(0.0, 1.0).expect("valid sd");
    corrs
        .iter()
        .enumerate()
        .map(|(d, &corr)| {
            let mut r = rng::stream(seed, Stream::Data, d as u64);
            let mut data = Vec::with_capacity(2 * n_per_domain);
            let mut labels = Vec::with_capacity(n_per_domain);
            let mut flipped = 0usize;
            for i in 0..n_per_domain {
                let z = i % 2;
                let core = (2.0 * z as f64 - 1.0) + unit.sample(&mut r);
                let y = if r.random_bool(label_noise) {
                    flipped += 1;
                    1 - z
                } else {
                    z
                };
                let sign = 2.0 * y as f64 - 1.0;
                let color = if r.random_bool(corr) { sign } else { -sign };
                data.extend_from_slice(&[core, color]);
                labels.push(y);
            }
            let meta = BTreeMap::from([
                ("generator".to_string(), json!("spurious_color")),
                ("corr".to_string(), json!(corr)),
                ("label_noise".to_string(), json!(label_noise)),
                ("n".to_string(), json!(n_per_domain)),
                ("n_flipped".to_string(), json!(flipped)),
                ("seed".to_string(), json!(seed)),
            ]);
            DomainDataset::new(
                d,
                Matrix::new(n_per_domain, 2, data)?,
                Targets::Classes(labels),
                meta,
            )
        })
        .collect()
}

/// Regression domains `y = w_inv . x_inv + w_e . x_sp + noise` with
/// standard-normal inputs and coefficients. `w_inv` is shared; `w_e` is drawn
/// per domain. Features are `[x_inv, x_sp]`.
pub fn gen_linear_domains(
    k: usize,
    d_invariant: usize,
    d_spurious: usize,
    n: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<DomainDataset>> {
    if k == 0 || d_invariant == 0 || n == 0 {
        return Err(PogmError::InvalidArgument(
            "K, d_invariant and n must be >= 1".into(),
        ));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(PogmError::InvalidArgument(format!("noise_sd = {noise_sd}")));
    }
    let unit = Normal::new(0.0, 1.0).expect("valid sd");
    let mut coef_rng = rng::stream(seed, Stream::Data, u64::MAX);
    let w_inv: Vec<f64> = (0..d_invariant).map(|_| unit.sample(&mut coef_rng)).collect();
    let dim = d_invariant + d_spurious;
    (0..k)
        .map(|d| {
            let w_e: Vec<f64> = (0..d_spurious).map(|_| unit.sample(&mut coef_rng)).collect();
            let mut r = rng::stream(seed, Stream::Data, d as u64);
            let mut data = Vec::with_capacity(n * dim);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let x: Vec<f64> = (0..dim).map(|_| unit.sample(&mut r)).collect();
                let mut y = 0.0;
                for (w, xi) in w_inv.iter().chain(&w_e).zip(&x) {
                    y += w * xi;
                }
                if noise_sd > 0.0 {
                    y += noise_sd * unit.sample(&mut r);
                }
                data.extend_from_slice(&x);
                ys.push(y);
            }
            let meta = BTreeMap::from([
                ("generator".to_string(), json!("linear")),
                ("w_inv".to_string(), json!(w_inv)),
                ("w_spurious".to_string(), json!(w_e)),
                ("n".to_string(), json!(n)),
                ("noise".to_string(), json!(noise_sd)),
                ("seed".to_string(), json!(seed)),
            ]);
            DomainDataset::new(d, Matrix::new(n, dim, data)?, Targets::Reals(ys), meta)
        })
        .collect()
}

/// Deterministic shuffle-split into `(train, holdout)`; both sides keep the
/// original sample order.
pub fn split(
    ds: &DomainDataset,
    train_frac: f64,
    seed: u64,
) -> Result<(DomainDataset, DomainDataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(PogmError::InvalidArgument(format!(
            "train_frac {train_frac} outside (0, 1)"
        )));
    }
    let n = ds.len();
    let n_train = (train_frac * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(PogmError::InvalidArgument(format!(
            "train_frac {train_frac} leaves an empty side for n = {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Stream::Split, ds.domain_id as u64));
    let (a, b) = idx.split_at_mut(n_train);
    a.sort_unstable();
    b.sort_unstable();
    Ok((ds.subset(a), ds.subset(b)))
}

/// Without-replacement epoch sampler, passed by value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplerState {
    pub seed: u64,
    pub epoch: u64,
    pub perm: Vec<usize>,
    pub cursor: usize,
    /// Set once a request asked for more samples than the dataset holds.
    pub clipped: bool,
}

fn epoch_perm(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Stream::Sampler, epoch));
    idx
}

impl SamplerState {
    pub fn new(seed: u64, n: usize) -> Self {
        Self {
            seed,
            epoch: 0,
            perm: epoch_perm(seed, 0, n),
            cursor: 0,
            clipped: false,
        }
    }
}

/// Next mini-batch of the current epoch. The last batch of an epoch may be
/// short; the following call starts a freshly shuffled epoch.
pub fn next_batch(
    ds: &DomainDataset,
    state: &SamplerState,
    batch_size: usize,
) -> Result<(Batch, SamplerState)> {
    if batch_size == 0 {
        return Err(PogmError::InvalidArgument("batch_size must be >= 1".into()));
    }
    let n = ds.len();
    if state.perm.len() != n {
        return Err(PogmError::Dimension {
            expected: n,
            got: state.perm.len(),
        });
    }
    let mut s = state.clone();
    let mut size = batch_size;
    if size > n {
        if !s.clipped {
            log::warn!("batch size {batch_size} clipped to dataset size {n}");
        }
        size = n;
        s.clipped = true;
    }
    if s.cursor >= n {
        s.epoch += 1;
        s.perm = epoch_perm(s.seed, s.epoch, n);
        s.cursor = 0;
    }
    let take = size.min(n - s.cursor);
    let batch = ds.batch(&s.perm[s.cursor..s.cursor + take]);
    s.cursor += take;
    Ok((batch, s))
}

/// Writes datasets as CSV with header `domain_id,f0..f{d-1},label`.
pub fn write_csv<W: Write>(mut w: W, datasets: &[DomainDataset]) -> Result<()> {
    let dim = datasets.first().ok_or(PogmError::Empty("dataset list"))?.dim();
    let mut header = String::from("domain_id");
    for j in 0..dim {
        header.push_str(&format!(",f{j}"));
    }
    header.push_str(",label\n");
    w.write_all(header.as_bytes())?;
    for ds in datasets {
        if ds.dim() != dim {
            return Err(PogmError::Dimension {
                expected: dim,
                got: ds.dim(),
            });
        }
        for i in 0..ds.len() {
            let mut line = ds.domain_id.to_string();
            for v in ds.features.row(i) {
                line.push_str(&format!(",{v:?}"));
            }
            match &ds.labels {
                Targets::Classes(c) => line.push_str(&format!(",{}\n", c[i])),
                Targets::Reals(r) => line.push_str(&format!(",{:?}\n", r[i])),
            }
            w.write_all(line.as_bytes())?;
        }
    }
    Ok(())
}

/// Reads the format produced by [`write_csv`]. Domains come back in order of
/// first appearance. Labels are class indices when every label is a plain
/// non-negative integer, real targets otherwise.
pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<DomainDataset>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or(PogmError::Empty("csv"))??;
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.len() < 3 || cols[0] != "domain_id" || cols[cols.len() - 1] != "label" {
        return Err(PogmError::Parse(format!("bad header: {header}")));
    }
    let dim = cols.len() - 2;
    let mut order: Vec<usize> = Vec::new();
    let mut rows: BTreeMap<usize, (Vec<f64>, Vec<String>)> = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(PogmError::Parse(format!(
                "line {}: expected {} fields, got {}",
                lineno + 2,
                dim + 2,
                fields.len()
            )));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|e| PogmError::Parse(format!("line {}: {e}", lineno + 2)))?;
        let entry = rows.entry(id).or_insert_with(|| {
            order.push(id);
            (Vec::new(), Vec::new())
        });
        for f in &fields[1..=dim] {
            entry.0.push(
                f.parse()
                    .map_err(|e| PogmError::Parse(format!("line {}: {e}", lineno + 2)))?,
            );
        }
        entry.1.push(fields[dim + 1].to_string());
    }
    let integral = rows
        .values()
        .flat_map(|(_, l)| l.iter())
        .all(|s| s.parse::<usize>().is_ok());
    order
        .into_iter()
        .map(|id| {
            let (data, raw) = rows.remove(&id).expect("present");
            let labels = if integral {
                Targets::Classes(raw.iter().map(|s| s.parse().expect("checked")).collect())
            } else {
                Targets::Reals(
                    raw.iter()
                        .map(|s| s.parse().map_err(|e| PogmError::Parse(format!("label {s}: {e}"))))
                        .collect::<Result<_>>()?,
                )
            };
            let n = raw.len();
            let meta = BTreeMap::from([("generator".to_string(), json!("csv"))]);
            DomainDataset::new(id, Matrix::new(n, dim, data)?, labels, meta)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(ds: &DomainDataset) -> &[usize] {
        match &ds.labels {
            Targets::Classes(c) => c,
            _ => panic!("classification expected"),
        }
    }

    #[test]
    fn zero_angle_is_base_sample() {
        let (base, labels) = two_moons_base(50, 3);
        let ds = gen_rotated_two_moons(&[0.0], 50, 0.0, 3).unwrap();
        assert_eq!(ds[0].features, base);
        assert_eq!(classes(&ds[0]), labels.as_slice());
    }

    #[test]
    fn quarter_turn() {
        let p = rotate([1.0, 0.0], 90.0);
        assert!((p[0] - 0.0).abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn moons_are_class_balanced() {
        for n in [2, 7, 100, 101] {
            let ds = gen_rotated_two_moons(&[0.0, 45.0], n, 0.1, 1).unwrap();
            for d in &ds {
                let ones = classes(d).iter().filter(|&&y| y == 1).count();
                assert_eq!(ones, n / 2);
                assert_eq!(d.len() - ones, n.div_ceil(2));
            }
        }
        assert!(gen_rotated_two_moons(&[], 10, 0.1, 1).is_err());
        assert!(gen_rotated_two_moons(&[0.0], 1, 0.1, 1).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gen_rotated_two_moons(&[0.0, 30.0], 64, 0.1, 9).unwrap();
        let b = gen_rotated_two_moons(&[0.0, 30.0], 64, 0.1, 9).unwrap();
        assert_eq!(a, b);
        let a = gen_spurious_color(&[0.9, 0.8], 0.25, 64, 9).unwrap();
        let b = gen_spurious_color(&[0.9, 0.8], 0.25, 64, 9).unwrap();
        assert_eq!(a, b);
        let a = gen_linear_domains(3, 2, 2, 64, 0.1, 9).unwrap();
        let b = gen_linear_domains(3, 2, 2, 64, 0.1, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perfect_color_matches_label() {
        let ds = gen_spurious_color(&[1.0], 0.0, 500, 4).unwrap();
        let y = classes(&ds[0]);
        for i in 0..ds[0].len() {
            assert_eq!(ds[0].features.get(i, 1), 2.0 * y[i] as f64 - 1.0);
        }
    }

    #[test]
    fn spurious_rates_within_binomial_bounds() {
        let n = 10_000;
        let ds = gen_spurious_color(&[0.5, 0.9], 0.25, n, 21).unwrap();
        for (d, target) in ds.iter().zip([0.5, 0.9]) {
            let y = classes(d);
            let agree = (0..n)
                .filter(|&i| d.features.get(i, 1) == 2.0 * y[i] as f64 - 1.0)
                .count() as f64
                / n as f64;
            let sigma = (target * (1.0 - target) / n as f64).sqrt();
            assert!((agree - target).abs() <= 3.0 * sigma, "{agree} vs {target}");
            let flipped = d.meta["n_flipped"].as_u64().unwrap() as f64 / n as f64;
            let sigma = (0.25f64 * 0.75 / n as f64).sqrt();
            assert!((flipped - 0.25).abs() <= 3.0 * sigma, "{flipped}");
        }
        assert!(gen_spurious_color(&[1.2], 0.1, 10, 0).is_err());
        assert!(gen_spurious_color(&[0.5], 0.5, 10, 0).is_err());
    }

    #[test]
    fn linear_domains_without_spurious_share_law() {
        let ds = gen_linear_domains(3, 2, 0, 10, 0.1, 5).unwrap();
        for d in &ds {
            assert_eq!(d.meta["w_inv"], ds[0].meta["w_inv"]);
            assert_eq!(d.meta["w_spurious"], json!(Vec::<f64>::new()));
            assert_eq!(d.dim(), 2);
        }
        assert_eq!(gen_linear_domains(1, 2, 2, 10, 0.1, 5).unwrap().len(), 1);
    }

    #[test]
    fn split_examples() {
        let ds = &gen_rotated_two_moons(&[0.0], 10, 0.1, 2).unwrap()[0];
        let (tr, ho) = split(ds, 0.8, 7).unwrap();
        assert_eq!((tr.len(), ho.len()), (8, 2));
        let mut rows: Vec<Vec<u64>> = (0..tr.len())
            .map(|i| tr.features.row(i).iter().map(|v| v.to_bits()).collect())
            .chain((0..ho.len()).map(|i| ho.features.row(i).iter().map(|v| v.to_bits()).collect()))
            .collect();
        let mut orig: Vec<Vec<u64>> = (0..ds.len())
            .map(|i| ds.features.row(i).iter().map(|v| v.to_bits()).collect())
            .collect();
        rows.sort();
        orig.sort();
        assert_eq!(rows, orig);
        assert_eq!(split(ds, 0.8, 7).unwrap(), (tr, ho));
        assert!(split(ds, 0.01, 7).is_err());
        assert!(split(ds, 1.0, 7).is_err());
    }

    #[test]
    fn one_epoch_is_a_permutation() {
        let ds = &gen_rotated_two_moons(&[0.0], 23, 0.1, 2).unwrap()[0];
        let mut s = SamplerState::new(5, ds.len());
        let mut seen = Vec::new();
        while seen.len() < ds.len() {
            let before = s.cursor;
            let (b, next) = next_batch(ds, &s, 5).unwrap();
            seen.extend_from_slice(&next.perm[before..next.cursor]);
            assert_eq!(b.len(), next.cursor - before);
            s = next;
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..ds.len()).collect::<Vec<_>>());
        // next call starts a new epoch
        let (_, s2) = next_batch(ds, &s, 5).unwrap();
        assert_eq!(s2.epoch, 1);
    }

    #[test]
    fn full_batch_and_clipping() {
        let ds = &gen_rotated_two_moons(&[0.0], 12, 0.1, 2).unwrap()[0];
        let s = SamplerState::new(1, ds.len());
        let (b, s1) = next_batch(ds, &s, 12).unwrap();
        assert_eq!(b.len(), 12);
        assert!(!s1.clipped);
        let (b, s2) = next_batch(ds, &s, 50).unwrap();
        assert_eq!(b.len(), 12);
        assert!(s2.clipped);
        assert!(next_batch(ds, &s, 0).is_err());
    }

    #[test]
    fn sampler_is_deterministic() {
        let ds = &gen_rotated_two_moons(&[0.0], 30, 0.1, 2).unwrap()[0];
        let run = || {
            let mut s = SamplerState::new(77, ds.len());
            let mut out = Vec::new();
            for _ in 0..10 {
                let (b, n) = next_batch(ds, &s, 7).unwrap();
                out.push(b);
                s = n;
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn csv_round_trip() {
        let ds = gen_rotated_two_moons(&[0.0, 30.0], 9, 0.1, 2).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &ds).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("domain_id,f0,f1,label\n"));
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in ds.iter().zip(&back) {
            assert_eq!(a.features, b.features);
            assert_eq!(a.labels, b.labels);
        }
        let lin = gen_linear_domains(2, 1, 1, 5, 0.1, 2).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &lin).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back[1].labels, lin[1].labels);
    }
}
