//! The `verify` verb: run invariant suites and print a pass/fail table.

use std::io::Write;

use ctflow::verify::{run_suite, VerifyRow};

/// Print the rows of `suite` to `w`; returns whether every row passed.
pub fn verify_cmd<W: Write>(suite: &str, mut w: W) -> anyhow::Result<bool> {
    let rows = run_suite(suite)?;
    write_table(&rows, &mut w)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    writeln!(w, "{} checks, {failed} failed", rows.len())?;
    Ok(failed == 0)
}

pub fn write_table<W: Write>(rows: &[VerifyRow], w: &mut W) -> std::io::Result<()> {
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.suite.to_string(),
                r.property.clone(),
                format!("{:.6e}", r.measured),
                r.bound_text(),
                if r.pass { "PASS" } else { "FAIL" }.to_string(),
            ]
        })
        .collect();
    let head = ["suite", "property", "measured", "bound", "verdict"].map(String::from);
    let mut width = head.clone().map(|h| h.len());
    for c in &cells {
        for (k, v) in c.iter().enumerate() {
            width[k] = width[k].max(v.len());
        }
    }
    for c in std::iter::once(&head).chain(&cells) {
        let line: Vec<String> = c.iter().zip(width).map(|(v, n)| format!("{v:<n$}")).collect();
        writeln!(w, "{}", line.join("  ").trim_end())?;
    }
    Ok(())
}
