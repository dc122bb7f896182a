//! Pinned encodings. Set `KATLAS_BLESS=1` to rewrite them after an
//! intentional format change.

use std::path::PathBuf;

use katlas_core::codec::{decode_trace, encode_trace, CodecConfig, Compression};
use katlas_core::sim::{canonical_program, run};

const GOLDEN: [(&str, &str, Compression); 3] = [
    ("pipeline2_none.kat", "pipeline2", Compression::None),
    ("pipeline2_deflate.kat", "pipeline2", Compression::Deflate),
    ("for_loop_deflate.kat", "for_loop", Compression::Deflate),
];

#[test]
fn golden_files_are_stable() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let bless = std::env::var_os("KATLAS_BLESS").is_some();
    for (file, name, compression) in GOLDEN {
        let c = canonical_program(name).unwrap();
        let trace = run(&c.program, c.seed).unwrap();
        let cfg = CodecConfig { compression, ..CodecConfig::default() };
        let (bytes, _) = encode_trace(&trace, cfg).unwrap();
        let path = dir.join(file);
        if bless {
            std::fs::write(&path, &bytes).unwrap();
        }
        let pinned = std::fs::read(&path).unwrap_or_else(|e| panic!("{file}: {e}"));
        assert_eq!(bytes, pinned, "{file}");
        assert_eq!(decode_trace(&pinned).unwrap(), trace, "{file}");
    }
}

#[test]
fn uncompressed_golden_is_readable_text() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let bytes = std::fs::read(dir.join("pipeline2_none.kat")).unwrap();
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.starts_with("KATLAS01Blocks:6\nFlags:addr\nCompression:none\nBasicBlock:0\n"));
    assert!(text.ends_with(&format!("End:{}\n", text.lines().count() - 4)));
}
