//! Flat parameter-vector arithmetic.
//!
//! Every model parameter set, gradient, and trajectory in the crate is a
//! [`ParamVector`]. Reductions sum sequentially from index 0 upward, so a
//! given input always produces the same bits.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PogmError, Result};

/// Norms below this are treated as zero by the degenerate-direction guards.
pub const EPS_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

fn check_finite(values: &[f64], op: &'static str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(PogmError::NonFinite { op, index }),
        None => Ok(()),
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(PogmError::Dimension {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "construction")?;
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Unit vector along `axis`.
    pub fn basis(len: usize, axis: usize) -> Self {
        let mut v = vec![0.0; len];
        v[axis] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        check_len(self.len(), other.len())?;
        Ok(dot_slices(&self.0, &other.0))
    }

    pub fn norm_sq(&self) -> f64 {
        dot_slices(&self.0, &self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        axpy(-1.0, other, self)
    }

    pub fn scale(&self, alpha: f64) -> Result<ParamVector> {
        let out: Vec<f64> = self.0.iter().map(|v| alpha * v).collect();
        check_finite(&out, "scale")?;
        Ok(Self(out))
    }

    pub fn cosine(&self, other: &ParamVector) -> Result<Cosine> {
        cosine(self, other)
    }

    /// SHA-256 over the little-endian bytes of every entry.
    pub fn checksum(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for v in &self.0 {
            hasher.update(v.to_le_bytes());
        }
        hasher.finalize().into()
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = PogmError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values)
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Returns `alpha * x + y`.
pub fn axpy(alpha: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    check_len(x.len(), y.len())?;
    let out: Vec<f64> = x.0.iter().zip(&y.0).map(|(a, b)| alpha * a + b).collect();
    check_finite(&out, "axpy")?;
    Ok(ParamVector(out))
}

/// Linear combination `Σ w_i v_i`, accumulated in list order.
pub fn combine(weights: &[f64], vectors: &[ParamVector]) -> Result<ParamVector> {
    check_len(weights.len(), vectors.len())?;
    let first = vectors.first().ok_or(PogmError::Empty("combine"))?;
    let mut out = vec![0.0; first.len()];
    for (w, v) in weights.iter().zip(vectors) {
        check_len(first.len(), v.len())?;
        for (o, x) in out.iter_mut().zip(&v.0) {
            *o += w * x;
        }
    }
    check_finite(&out, "combine")?;
    Ok(ParamVector(out))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cosine {
    pub value: f64,
    /// Set when either input norm fell below [`EPS_NORM`]; `value` is then 0.
    pub degenerate: bool,
}

pub fn cosine(a: &ParamVector, b: &ParamVector) -> Result<Cosine> {
    let ab = a.dot(b)?;
    let aa = a.norm_sq();
    let bb = b.norm_sq();
    if aa.sqrt() < EPS_NORM || bb.sqrt() < EPS_NORM {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    // sqrt(aa * bb) reproduces |aa| exactly when a == b, so cosine(v, v) is 1.
    let denom = (aa * bb).sqrt();
    let denom = if denom.is_finite() && denom > 0.0 {
        denom
    } else {
        aa.sqrt() * bb.sqrt()
    };
    Ok(Cosine {
        value: (ab / denom).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

pub fn mean(vectors: &[ParamVector]) -> Result<ParamVector> {
    let first = vectors.first().ok_or(PogmError::Empty("mean of no vectors"))?;
    let n = vectors.len() as f64;
    let mut out = vec![0.0; first.len()];
    for v in vectors {
        check_len(first.len(), v.len())?;
        for (o, x) in out.iter_mut().zip(&v.0) {
            *o += x;
        }
    }
    for o in &mut out {
        *o /= n;
    }
    check_finite(&out, "mean")?;
    Ok(ParamVector(out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Maps named tensors onto contiguous ranges of a flat vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShapeManifest {
    entries: Vec<ManifestEntry>,
}

impl ShapeManifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor directly after the previous one.
    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>) {
        let len = dims.iter().product();
        let offset = self.total_len();
        self.entries.push(ManifestEntry {
            name: name.into(),
            dims,
            offset,
            len,
        });
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn total_len(&self) -> usize {
        self.entries.last().map_or(0, |e| e.offset + e.len)
    }

    pub fn get(&self, name: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Borrow the slice of `params` that belongs to tensor `name`.
    pub fn view<'a>(&self, params: &'a ParamVector, name: &str) -> Option<&'a [f64]> {
        let e = self.get(name)?;
        params.as_slice().get(e.offset..e.offset + e.len)
    }
}
