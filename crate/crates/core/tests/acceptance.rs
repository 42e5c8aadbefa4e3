//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.
//!
//! `ACCEPTANCE_ONLY=A1,A4` restricts the run, `ACCEPTANCE_WORKERS` sets the
//! thread count.

use defaultlab::cli::acceptance::{run_suite, SuiteOptions};

fn main() {
    let only = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(|x| x.trim().to_string()).collect());
    let workers = std::env::var("ACCEPTANCE_WORKERS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let out = tempfile::tempdir().expect("temporary directory");
    let opts = SuiteOptions {
        seed: 42,
        workers,
        out_dir: Some(out.path().to_path_buf()),
        only,
    };
    let results = match run_suite(&opts) {
        Ok(r) => r,
        Err(e) => {
            println!("acceptance suite aborted: {e}");
            std::process::exit(1);
        }
    };
    let mut failed = 0;
    for r in &results {
        println!("{}", r.summary_line());
        for m in &r.metrics {
            println!(
                "    {} {:e} ± {:e} [{:e}] {}",
                m.name,
                m.value,
                m.se,
                m.tolerance,
                if m.pass { "PASS" } else { "FAIL" }
            );
        }
        failed += usize::from(!r.passed());
    }
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed,
        failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
