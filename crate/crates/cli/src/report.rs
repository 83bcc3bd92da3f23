//! Report envelope: every subcommand emits `{ manifest, result }` where the
//! manifest records the command, inputs, resolved options, seeds, tool
//! version, and a sha256 digest of the serialized result. Identical
//! manifests reproduce identical digests on one platform.

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub struct ManifestInputs {
    pub command: &'static str,
    pub inputs: Vec<String>,
    pub options: Value,
    pub seeds: Vec<u64>,
}

pub fn envelope(meta: ManifestInputs, result: Value) -> Value {
    // serde_json maps are sorted, so this serialization is canonical for a
    // given result value.
    let serialized = serde_json::to_string(&result).expect("serializable result");
    let digest = hex(&Sha256::digest(serialized.as_bytes()));
    json!({
        "manifest": {
            "command": meta.command,
            "inputs": meta.inputs,
            "options": meta.options,
            "seeds": meta.seeds,
            "version": env!("CARGO_PKG_VERSION"),
            "output_digest": digest,
        },
        "result": result,
    })
}

pub fn file_digest(path: &std::path::Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
