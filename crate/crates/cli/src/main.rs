//! `facestab`: batch commands over the projection geometry, entropic
//! solver, verification suites, and the paged decode simulator.
//!
//! Every run writes its artifacts plus a `manifest.json` recording the
//! seed, resolved parameters, and artifact checksums. Artifact bodies are
//! deterministic given `--seed`; timestamps exist only in the manifest.
//!
//! Exit codes: 0 when every asserted invariant passed, 2 when the only
//! non-passes were degenerate skips, 1 on failure or error.

mod commands;
mod io;

use clap::Parser;

fn main() {
    // An optional JSON config supplies flag defaults: its entries are
    // injected before the user's flags, so explicit flags override it and
    // unknown keys are rejected by the parser with the valid flag list.
    let raw: Vec<String> = std::env::args().collect();
    let argv = match io::expand_config_args(raw) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    };
    let cli = commands::Cli::parse_from(argv);
    match commands::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
