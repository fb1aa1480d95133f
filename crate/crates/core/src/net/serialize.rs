//! Plain-text network format for exact replay:
//!
//! ```text
//! flowlab-network 1
//! architecture {"kind":"shallow","input_dim":8,"units":10}
//! activation {"kind":"relu"}
//! weights 100
//! 1.2345678901234567e-1
//! ...
//! ```
//!
//! Weights are written with 17 significant digits, which round-trips every f64.

use std::fmt::Write as _;

use super::{Activation, ArchitectureSpec, Network};
use crate::error::{Error, Result};

const MAGIC: &str = "flowlab-network 1";

pub fn to_text(net: &Network) -> String {
    let mut s = String::new();
    writeln!(s, "{MAGIC}").unwrap();
    writeln!(s, "architecture {}", serde_json::to_string(net.spec()).unwrap()).unwrap();
    writeln!(s, "activation {}", serde_json::to_string(&net.activation()).unwrap()).unwrap();
    writeln!(s, "weights {}", net.param_len()).unwrap();
    for w in net.params() {
        writeln!(s, "{w:.16e}").unwrap();
    }
    s
}

pub fn from_text(text: &str) -> Result<Network> {
    let mut lines = text.lines();
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::Parse(format!("missing {what}")));
    if next("header")?.trim() != MAGIC {
        return Err(Error::Parse("not a flowlab network file".into()));
    }
    let field = |line: &str, key: &str| -> Result<String> {
        line.strip_prefix(key)
            .map(|rest| rest.trim().to_string())
            .ok_or_else(|| Error::Parse(format!("expected `{key}` line")))
    };
    let spec: ArchitectureSpec = serde_json::from_str(&field(next("architecture")?, "architecture")?)?;
    let activation: Activation = serde_json::from_str(&field(next("activation")?, "activation")?)?;
    let count: usize = field(next("weights")?, "weights")?
        .parse()
        .map_err(|e| Error::Parse(format!("weight count: {e}")))?;
    let params = (0..count)
        .map(|i| {
            next("weight")?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("weight {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut net = Network::zeros(spec, activation)?;
    net.set_params(&params)?;
    Ok(net)
}
