use std::path::PathBuf;

use anyhow::Result;
use popprobe::trace::TraceReader;

use super::{open, trace_exit_code};
use crate::error::{coded, EXIT_OK};

#[derive(Debug, Clone, clap::Args)]
pub struct ValidateArgs {
    /// Trace file to check.
    pub trace: PathBuf,
}

/// Reads every record and checks every invariant. Prints a summary and
/// returns the exit code: 0 valid, 2 unreadable, 3 corrupt or invalid.
pub fn cmd_validate(args: &ValidateArgs) -> Result<u8> {
    let source = match open(&args.trace, "trace file") {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            return Ok(crate::error::exit_code_of(&e));
        }
    };
    let result = TraceReader::new(source).and_then(|reader| {
        let config = *reader.config();
        let declared = reader.record_count();
        let mut n = 0usize;
        for r in reader {
            r?;
            n += 1;
        }
        Ok((config, declared, n))
    });
    match result {
        Ok((config, declared, n)) => {
            println!(
                "{}: {n} of {declared} records valid (L={}, d={}, H={}, |V|={})",
                args.trace.display(),
                config.num_layers,
                config.d_model,
                config.num_heads,
                config.vocab_size
            );
            Ok(EXIT_OK)
        }
        Err(e) => {
            let code = trace_exit_code(&e);
            let err = coded(code, anyhow::Error::new(e));
            eprintln!("{}: {err:#}", args.trace.display());
            Ok(code)
        }
    }
}
