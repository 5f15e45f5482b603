use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::tensor::Tensor;

/// SHA-256 over parameter shapes and the little-endian bytes of every value.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Checksum(pub [u8; 32]);

impl fmt::Display for Checksum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for Checksum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Checksum({})", &hex::encode(self.0)[..16])
    }
}

impl Serialize for Checksum {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Checksum {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("checksum must be 32 bytes"))?;
        Ok(Checksum(arr))
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParameterVector {
    entries: Vec<(String, Tensor)>,
}

impl ParameterVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// All values concatenated in iteration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrites values from a flat slice laid out as in [`flatten`](Self::flatten).
    pub fn load_flat(&mut self, flat: &[f64]) -> bool {
        if flat.len() != self.total_count() {
            return false;
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        true
    }

    pub fn checksum(&self) -> Checksum {
        let mut h = Sha256::new();
        for t in self.tensors() {
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        Checksum(h.finalize().into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_and_checksum() {
        let mut p = ParameterVector::new();
        p.push("a", Tensor::zeros(&[2, 3]));
        p.push("b", Tensor::zeros(&[4]));
        assert_eq!(p.total_count(), 10);
        let before = p.checksum();
        p.get_mut("b").unwrap().data_mut()[0] = 1e-300;
        assert_ne!(before, p.checksum());
        let flat = p.flatten();
        let mut q = p.clone();
        q.get_mut("a").unwrap().data_mut()[0] = 7.0;
        assert!(q.load_flat(&flat));
        assert_eq!(q.checksum(), p.checksum());
    }

    #[test]
    fn checksum_serde_round_trip() {
        let c = ParameterVector::new().checksum();
        let s = serde_json::to_string(&c).unwrap();
        let back: Checksum = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
