//! Keeps include/cmest.h honest: the header must parse as C11, and every
//! exported symbol must be declared in it (and vice versa).

use std::collections::BTreeSet;
use std::process::Command;

fn header_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cmest.h")
}

#[test]
fn header_parses_as_c() {
    let header = header_path();
    for compiler in ["clang", "cc", "gcc"] {
        let result = Command::new(compiler)
            .args(["-std=c11", "-fsyntax-only", "-Wall", "-Werror"])
            .arg("-xc")
            .arg(&header)
            .output();
        match result {
            Ok(out) => {
                assert!(
                    out.status.success(),
                    "{compiler} rejected the header:\n{}",
                    String::from_utf8_lossy(&out.stderr)
                );
                return;
            }
            Err(_) => continue, // compiler not installed; try the next one
        }
    }
    eprintln!("no C compiler found; header syntax not checked");
}

#[test]
fn header_and_exports_agree() {
    let header = std::fs::read_to_string(header_path()).unwrap();
    let source = std::fs::read_to_string(
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs"),
    )
    .unwrap();

    let exported: BTreeSet<String> = source
        .lines()
        .zip(source.lines().skip(1).chain(std::iter::once("")))
        .filter(|(line, _)| line.trim() == "#[no_mangle]")
        .filter_map(|(_, next)| {
            next.split("fn ").nth(1).and_then(|rest| rest.split('(').next()).map(str::to_owned)
        })
        .collect();
    assert!(!exported.is_empty(), "no exported symbols found");

    for name in &exported {
        assert!(header.contains(&format!("{name}(")), "header is missing {name}");
    }
    // and the header declares nothing we do not export
    for token in header.split(|c: char| !(c.is_alphanumeric() || c == '_')) {
        if let Some(rest) = token.strip_prefix("cmest_") {
            let name = format!("cmest_{rest}");
            let is_type_or_enum = name.starts_with("cmest_status")
                || name.chars().any(|c| c.is_ascii_uppercase());
            if !is_type_or_enum && !name.is_empty() {
                assert!(exported.contains(&name), "header declares unexported {name}");
            }
        }
    }
}
