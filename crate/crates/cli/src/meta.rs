//! Metadata header carried by every output file.

use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of `text`.
pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `# key: value` lines. `config` is the canonical text the results depend on.
pub fn header(command: &str, config: &str, seeds: &[u64], extra: &[(&str, String)]) -> String {
    let mut out = format!(
        "# adhoc-csi {VERSION}\n# command: {command}\n# config_sha256: {}\n",
        sha256_hex(config)
    );
    if !seeds.is_empty() {
        let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
        out.push_str(&format!("# seeds: {}\n", list.join(",")));
    }
    for (k, v) in extra {
        out.push_str(&format!("# {k}: {v}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn header_lines_are_comments() {
        let h = header("run", "x = 1\n", &[1, 2], &[("note", "ok".into())]);
        assert!(h.lines().all(|l| l.starts_with("# ")));
        assert!(h.contains("# seeds: 1,2\n"));
    }
}
