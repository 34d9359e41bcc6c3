//! Checkpoint values and their binary container.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "CKPTSOUP"
//! version      1 byte    0x01
//! manifest_len u64
//! manifest     manifest_len bytes of UTF-8 JSON
//! payload      raw f32 values, one block per tensor
//! ```
//!
//! The manifest is `{"meta": {k: v}, "tensors": {name: {"shape", "offset", "length"}}}`
//! with offsets and lengths in bytes relative to the start of the payload. Tensors
//! appear in lexicographic name order both in the manifest and in the payload, so
//! equal checkpoints serialize to identical bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"CKPTSOUP";
pub const FORMAT_VERSION: u8 = 1;

const HEADER_LEN: usize = MAGIC.len() + 1 + 8;

/// Dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_shape(&shape).map_err(|detail| Error::Validation {
            tensor: String::new(),
            detail,
        })?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Validation {
                tensor: String::new(),
                detail: format!(
                    "shape {shape:?} needs {expected} elements, got {}",
                    data.len()
                ),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    /// One-dimensional tensor. Panics on an empty vector.
    pub fn from_vec(data: Vec<f32>) -> Self {
        assert!(!data.is_empty(), "tensor needs at least one element");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Bit-level equality, so `NaN` payloads and signed zeros compare exactly.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn check_shape(shape: &[usize]) -> std::result::Result<(), String> {
    if shape.iter().any(|&d| d == 0) {
        return Err(format!("shape {shape:?} has a zero dimension"));
    }
    Ok(())
}

/// A named, ordered collection of tensors plus free-form string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    tensors: BTreeMap<String, Tensor>,
    meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::Validation {
                tensor: name,
                detail: "tensor name is empty".into(),
            });
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn with_tensor(mut self, name: impl Into<String>, tensor: Tensor) -> Result<Self> {
        self.insert(name, tensor)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    pub fn bit_eq(&self, other: &Checkpoint) -> bool {
        self.meta == other.meta
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
    }

    /// Checks every invariant; non-finite values are rejected unless allowed.
    pub fn validate(&self, allow_nonfinite: bool) -> Result<()> {
        for (name, t) in &self.tensors {
            let fail = |detail: String| Error::Validation {
                tensor: name.clone(),
                detail,
            };
            if name.is_empty() {
                return Err(fail("tensor name is empty".into()));
            }
            check_shape(&t.shape).map_err(fail)?;
            let expected: usize = t.shape.iter().product();
            if expected != t.data.len() {
                return Err(fail(format!(
                    "shape {:?} needs {expected} elements, got {}",
                    t.shape,
                    t.data.len()
                )));
            }
            if !allow_nonfinite {
                if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
                    return Err(fail(format!("non-finite value {} at index {i}", t.data[i])));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MismatchKind {
    MissingInA,
    MissingInB,
    ShapeMismatch,
}

impl fmt::Display for MismatchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MismatchKind::MissingInA => "missing-in-a",
            MismatchKind::MissingInB => "missing-in-b",
            MismatchKind::ShapeMismatch => "shape-mismatch",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub tensor: String,
    pub kind: MismatchKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatReport {
    pub compatible: bool,
    pub mismatches: Vec<Mismatch>,
}

impl fmt::Display for CompatReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.compatible {
            return f.write_str("compatible");
        }
        for (i, m) in self.mismatches.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{} ({}): {}", m.tensor, m.kind, m.detail)?;
        }
        Ok(())
    }
}

pub fn validate_compat(a: &Checkpoint, b: &Checkpoint) -> CompatReport {
    let mut mismatches = Vec::new();
    for (name, ta) in &a.tensors {
        match b.tensors.get(name) {
            None => mismatches.push(Mismatch {
                tensor: name.clone(),
                kind: MismatchKind::MissingInB,
                detail: format!("shape {:?} only in a", ta.shape),
            }),
            Some(tb) if tb.shape != ta.shape => mismatches.push(Mismatch {
                tensor: name.clone(),
                kind: MismatchKind::ShapeMismatch,
                detail: format!("a {:?} vs b {:?}", ta.shape, tb.shape),
            }),
            Some(_) => {}
        }
    }
    for (name, tb) in &b.tensors {
        if !a.tensors.contains_key(name) {
            mismatches.push(Mismatch {
                tensor: name.clone(),
                kind: MismatchKind::MissingInA,
                detail: format!("shape {:?} only in b", tb.shape),
            });
        }
    }
    mismatches.sort_by(|x, y| x.tensor.cmp(&y.tensor));
    CompatReport {
        compatible: mismatches.is_empty(),
        mismatches,
    }
}

pub(crate) fn ensure_compat(a: &Checkpoint, b: &Checkpoint) -> Result<()> {
    let report = validate_compat(a, b);
    if report.compatible {
        Ok(())
    } else {
        Err(Error::Compat(report))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    meta: BTreeMap<String, String>,
    tensors: BTreeMap<String, ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub allow_nonfinite: bool,
}

pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.validate(true)?;
    let mut offset = 0u64;
    let mut entries = BTreeMap::new();
    for (name, t) in &ckpt.tensors {
        let length = (t.data.len() * 4) as u64;
        entries.insert(
            name.clone(),
            ManifestEntry {
                shape: t.shape.clone(),
                offset,
                length,
            },
        );
        offset += length;
    }
    let manifest = serde_json::to_vec(&Manifest {
        meta: ckpt.meta.clone(),
        tensors: entries,
    })?;

    let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + offset as usize);
    out.extend_from_slice(&MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for t in ckpt.tensors.values() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8], opts: LoadOptions) -> Result<Checkpoint> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if bytes[..8] != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = bytes[8];
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let manifest_len = u64::from_le_bytes(bytes[9..17].try_into().expect("8 bytes")) as usize;
    let manifest_end = HEADER_LEN
        .checked_add(manifest_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Format("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..manifest_end])
        .map_err(|e| Error::Format(format!("bad manifest: {e}")))?;
    let payload = &bytes[manifest_end..];

    let mut expected_payload = 0u64;
    let mut ckpt = Checkpoint {
        tensors: BTreeMap::new(),
        meta: manifest.meta,
    };
    for (name, entry) in manifest.tensors {
        if name.is_empty() {
            return Err(Error::Format("empty tensor name in manifest".into()));
        }
        let numel = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor `{name}`: shape overflows")))?;
        if entry.length != numel as u64 * 4 {
            return Err(Error::Format(format!(
                "tensor `{name}`: byte length {} does not match shape {:?}",
                entry.length, entry.shape
            )));
        }
        let start = entry.offset as usize;
        let end = start
            .checked_add(entry.length as usize)
            .filter(|&e| e <= payload.len())
            .ok_or_else(|| Error::Format(format!("tensor `{name}`: truncated data")))?;
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        check_shape(&entry.shape).map_err(|detail| Error::Validation {
            tensor: name.clone(),
            detail,
        })?;
        expected_payload += entry.length;
        ckpt.tensors.insert(
            name,
            Tensor {
                shape: entry.shape,
                data,
            },
        );
    }
    if expected_payload != payload.len() as u64 {
        return Err(Error::Format(format!(
            "payload is {} bytes, manifest describes {expected_payload}",
            payload.len()
        )));
    }
    ckpt.validate(opts.allow_nonfinite)?;
    Ok(ckpt)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    load_checkpoint_with(path, LoadOptions::default())
}

pub fn load_checkpoint_with(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes, opts)
}

/// Writes `ckpt` to a temporary file next to `path` and renames it into place.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    ckpt.validate(false)?;
    let bytes = to_bytes(ckpt)?;
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        Checkpoint::new()
            .with_tensor("w", Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap())
            .unwrap()
            .with_tensor("b", Tensor::new(vec![4], vec![0.5, -0.5, 0.25, 1e-3]).unwrap())
            .unwrap()
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let mut c = sample();
        c.set_meta("step", "1000");
        save_checkpoint(&c, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert!(back.bit_eq(&c));
        assert_eq!(back.get("w").unwrap().shape(), &[2, 3]);
        assert_eq!(back.get("b").unwrap().shape(), &[4]);
    }

    #[test]
    fn manifest_lists_both_shapes() {
        let bytes = to_bytes(&sample()).unwrap();
        let len = u64::from_le_bytes(bytes[9..17].try_into().unwrap()) as usize;
        let manifest: serde_json::Value = serde_json::from_slice(&bytes[17..17 + len]).unwrap();
        assert_eq!(manifest["tensors"]["w"]["shape"], serde_json::json!([2, 3]));
        assert_eq!(manifest["tensors"]["b"]["shape"], serde_json::json!([4]));
        // "b" sorts first, so it sits at payload offset zero.
        assert_eq!(manifest["tensors"]["b"]["offset"], 0);
        assert_eq!(manifest["tensors"]["w"]["offset"], 16);
    }

    #[test]
    fn empty_checkpoint_has_zero_entry_manifest() {
        let bytes = to_bytes(&Checkpoint::new()).unwrap();
        let back = from_bytes(&bytes, LoadOptions::default()).unwrap();
        assert!(back.is_empty());
        let text = String::from_utf8_lossy(&bytes[17..]);
        assert!(text.contains("\"tensors\":{}"));
    }

    #[test]
    fn saving_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a"), dir.path().join("b"));
        save_checkpoint(&sample(), &p1).unwrap();
        save_checkpoint(&sample(), &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn zeroed_magic_is_format_error() {
        let mut bytes = to_bytes(&sample()).unwrap();
        bytes[..8].fill(0);
        assert!(matches!(
            from_bytes(&bytes, LoadOptions::default()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let bytes = to_bytes(&sample()).unwrap();
        for cut in [3, 17, bytes.len() - 1] {
            assert!(
                matches!(
                    from_bytes(&bytes[..cut], LoadOptions::default()),
                    Err(Error::Format(_))
                ),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn nan_names_the_tensor() {
        let c = Checkpoint::new()
            .with_tensor("ok", Tensor::from_vec(vec![1.0]))
            .unwrap()
            .with_tensor("bad", Tensor::from_vec(vec![0.0, f32::NAN]))
            .unwrap();
        let bytes = to_bytes(&c).unwrap();
        match from_bytes(&bytes, LoadOptions::default()) {
            Err(Error::Validation { tensor, .. }) => assert_eq!(tensor, "bad"),
            other => panic!("expected validation error, got {other:?}"),
        }
        let lenient = from_bytes(
            &bytes,
            LoadOptions {
                allow_nonfinite: true,
            },
        )
        .unwrap();
        assert!(lenient.get("bad").unwrap().data()[1].is_nan());
    }

    #[test]
    fn save_rejects_nonfinite() {
        let dir = tempfile::tempdir().unwrap();
        let c = Checkpoint::new()
            .with_tensor("x", Tensor::from_vec(vec![f32::INFINITY]))
            .unwrap();
        assert!(matches!(
            save_checkpoint(&c, dir.path().join("x")),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Checkpoint::new().insert("", Tensor::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn compat_reports() {
        let a = sample();
        assert_eq!(
            validate_compat(&a, &a),
            CompatReport {
                compatible: true,
                mismatches: vec![]
            }
        );

        let a = Checkpoint::new()
            .with_tensor("w1", Tensor::zeros(vec![2, 2]).unwrap())
            .unwrap()
            .with_tensor("bias", Tensor::zeros(vec![2]).unwrap())
            .unwrap();
        let b = Checkpoint::new()
            .with_tensor("w1", Tensor::zeros(vec![2, 3]).unwrap())
            .unwrap();
        let r = validate_compat(&a, &b);
        assert!(!r.compatible);
        assert_eq!(r.mismatches.len(), 2);
        assert_eq!(r.mismatches[0].tensor, "bias");
        assert_eq!(r.mismatches[0].kind, MismatchKind::MissingInB);
        assert_eq!(r.mismatches[1].tensor, "w1");
        assert_eq!(r.mismatches[1].kind, MismatchKind::ShapeMismatch);

        // Swapping arguments swaps the missing-in labels only.
        let r2 = validate_compat(&b, &a);
        assert_eq!(r2.mismatches[0].kind, MismatchKind::MissingInA);
        assert_eq!(r2.mismatches[1].kind, MismatchKind::ShapeMismatch);
    }

    fn arb_checkpoint() -> impl Strategy<Value = Checkpoint> {
        prop::collection::btree_map(
            "[a-z][a-z0-9_.]{0,8}",
            prop::collection::vec(1usize..4, 1..3).prop_flat_map(|shape| {
                let n: usize = shape.iter().product();
                (Just(shape), prop::collection::vec(any::<f32>(), n))
            }),
            0..5,
        )
        .prop_map(|m| {
            let mut c = Checkpoint::new();
            for (name, (shape, data)) in m {
                c.insert(name, Tensor::new(shape, data).unwrap()).unwrap();
            }
            c
        })
    }

    proptest! {
        #[test]
        fn bytes_round_trip_bit_exact(c in arb_checkpoint()) {
            let bytes = to_bytes(&c).unwrap();
            let back = from_bytes(&bytes, LoadOptions { allow_nonfinite: true }).unwrap();
            prop_assert!(back.bit_eq(&c));
            prop_assert_eq!(to_bytes(&back).unwrap(), bytes);
        }
    }
}
