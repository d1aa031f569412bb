//! Binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   4 bytes  "PSCK"
//! version u16      1
//! hdr_len u32      length of the JSON header in bytes
//! header  hdr_len  UTF-8 JSON: kind, meta, section names, tensor table
//! payload          every tensor's values as f64, in tensor-table order
//! ```

use serde::{Deserialize, Serialize};

use crate::{NnError, ParamStore, Result, Tensor};

pub const CONTAINER_MAGIC: &[u8; 4] = b"PSCK";
pub const CONTAINER_VERSION: u16 = 1;

const PREAMBLE: usize = 4 + 2 + 4;

/// A named parameter store inside a container.
#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub params: ParamStore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub sections: Vec<Section>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    sections: Vec<String>,
    tensors: Vec<TensorRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    section: usize,
    group: String,
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

fn fmt_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NnError::Format(msg.into()))
}

impl Container {
    pub fn section(&self, name: &str) -> Option<&ParamStore> {
        self.sections.iter().find(|s| s.name == name).map(|s| &s.params)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        for (si, sec) in self.sections.iter().enumerate() {
            for e in sec.params.entries() {
                tensors.push(TensorRecord {
                    section: si,
                    group: e.group.clone(),
                    name: e.name.clone(),
                    shape: e.value.shape().to_vec(),
                    trainable: e.trainable,
                });
                for v in e.value.data() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            sections: self.sections.iter().map(|s| s.name.clone()).collect(),
            tensors,
        };
        let hdr = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(PREAMBLE + hdr.len() + payload.len());
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(hdr.len() as u32).to_le_bytes());
        out.extend_from_slice(&hdr);
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Container> {
        if bytes.len() < PREAMBLE {
            return fmt_err(format!("truncated preamble ({} bytes)", bytes.len()));
        }
        if &bytes[..4] != CONTAINER_MAGIC {
            return fmt_err("bad magic");
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CONTAINER_VERSION {
            return fmt_err(format!("unsupported version {}", version));
        }
        let hdr_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        let rest = &bytes[PREAMBLE..];
        if hdr_len > rest.len() {
            return fmt_err(format!("header length {} exceeds file", hdr_len));
        }
        let header: Header = serde_json::from_slice(&rest[..hdr_len])
            .map_err(|e| NnError::Format(format!("header: {}", e)))?;
        let payload = &rest[hdr_len..];
        if payload.len() % 8 != 0 {
            return fmt_err("payload is not a whole number of f64 values");
        }
        let available = payload.len() / 8;
        let mut needed = 0usize;
        for t in &header.tensors {
            if t.section >= header.sections.len() {
                return fmt_err(format!("tensor {} names unknown section {}", t.name, t.section));
            }
            let n = t
                .shape
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d))
                .ok_or_else(|| NnError::Format(format!("shape overflow in {}", t.name)))?;
            needed = needed
                .checked_add(n)
                .ok_or_else(|| NnError::Format("payload size overflow".into()))?;
        }
        if needed != available {
            return fmt_err(format!(
                "payload holds {} values, tensor table needs {}",
                available, needed
            ));
        }
        let mut sections: Vec<Section> = header
            .sections
            .iter()
            .map(|name| Section {
                name: name.clone(),
                params: ParamStore::new(),
            })
            .collect();
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for t in header.tensors {
            let n: usize = t.shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            let tensor = Tensor::from_vec(&t.shape, data)?;
            let store = &mut sections[t.section].params;
            let id = store.add(&t.group, &t.name, tensor);
            store.entries_mut()[id.0].trainable = t.trainable;
        }
        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            sections,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut a = ParamStore::new();
        a.add("block_1", "w", Tensor::from_vec(&[2, 2], vec![1.0, -2.5, 3.0, f64::MIN_POSITIVE]).unwrap());
        a.add("head", "b", Tensor::scalar(0.125));
        a.set_group_trainable("block_1", false);
        Container {
            kind: "classifier".into(),
            meta: serde_json::json!({"epoch": 3}),
            sections: vec![
                Section { name: "model".into(), params: a },
                Section { name: "empty".into(), params: ParamStore::new() },
            ],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = Container::decode(&c.encode()).unwrap();
        assert_eq!(back, c);
        assert!(!back.section("model").unwrap().entries()[0].trainable);
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let bytes = sample().encode();
        for cut in [0, 3, 9, bytes.len() - 1] {
            assert!(Container::decode(&bytes[..cut]).is_err(), "cut {}", cut);
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Container::decode(&bad).is_err());
        let mut extra = bytes;
        extra.extend_from_slice(&[0u8; 8]);
        assert!(Container::decode(&extra).is_err());
    }
}
