//! Output provenance: every command upserts the files it wrote into
//! `<out_dir>/manifest.tsv` with their content hash, the hash of the
//! resolved run config, the tool version and the seed. No timestamps, so
//! identical runs produce identical manifests.

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

const HEADER: &str = "path\tsha256\tconfig_sha256\ttool_version\tseed";

pub fn sha256_hex(text: &str) -> String {
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file =
        File::open(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// Re-hash `paths` and rewrite the manifest with the union of old and new
/// entries, sorted by path.
pub fn record(out_dir: &Path, config_hash: &str, seed: u64, paths: &[PathBuf]) -> Result<()> {
    let manifest = out_dir.join("manifest.tsv");
    let mut rows: BTreeMap<String, String> = BTreeMap::new();
    if manifest.exists() {
        let reader = BufReader::new(
            File::open(&manifest)
                .with_context(|| format!("reading {}", manifest.display()))?,
        );
        for line in reader.lines().skip(1) {
            let line = line?;
            if let Some((path, rest)) = line.split_once('\t') {
                rows.insert(path.to_string(), rest.to_string());
            }
        }
    }
    let version = env!("CARGO_PKG_VERSION");
    for path in paths {
        let digest = sha256_file(path)?;
        // key by location relative to the output directory when inside it
        let key = path
            .strip_prefix(out_dir)
            .map(|p| p.display().to_string())
            .unwrap_or_else(|_| path.display().to_string());
        rows.insert(key, format!("{digest}\t{config_hash}\t{version}\t{seed}"));
    }
    let mut w = File::create(&manifest)
        .with_context(|| format!("writing {}", manifest.display()))?;
    writeln!(w, "{HEADER}")?;
    for (path, rest) in &rows {
        writeln!(w, "{path}\t{rest}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_upserts_and_stays_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        std::fs::write(&a, "one").unwrap();
        std::fs::write(&b, "two").unwrap();
        record(dir.path(), "cfg1", 7, &[b.clone()]).unwrap();
        record(dir.path(), "cfg1", 7, &[a.clone()]).unwrap();
        let text = std::fs::read_to_string(dir.path().join("manifest.tsv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], HEADER);
        assert!(lines[1].starts_with("a.csv\t"));
        assert!(lines[2].starts_with("b.csv\t"));
        assert!(lines[1].ends_with("\t7"));

        // updating a file replaces its row instead of appending
        std::fs::write(&a, "one changed").unwrap();
        record(dir.path(), "cfg2", 9, &[a]).unwrap();
        let text2 = std::fs::read_to_string(dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(text2.lines().count(), 3);
        assert!(text2.lines().nth(1).unwrap().contains("cfg2"));
        assert!(text2.lines().nth(2).unwrap().contains("cfg1"));
    }

    #[test]
    fn file_hash_matches_known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(sha256_hex("abc"), sha256_file(&p).unwrap());
    }
}
