//! Versioned on-disk records for models and the policy bundle.
//!
//! Network, marginal, and copula parameters are decimal text (Rust's float
//! formatting round-trips bit-exactly); the KDE copula keeps its binary
//! little-endian record. A policy bundle is a self-describing manifest
//! followed by length-prefixed embedded sections, so the whole file
//! round-trips byte-identically.

use crate::copula::{Copula, GaussianCopula, GaussianMixtureCopula, KdeCopula};
use crate::data::{
    join_floats, join_usizes, parse_float, parse_floats, parse_usize, parse_usizes, Normalization,
};
use crate::error::{Error, Result};
use crate::marginal::MarginalModel;
use crate::nn::{Activation, Layout, NetworkParams};
use crate::policy::CopulaPolicy;
use std::fmt::Write as _;
use std::path::Path;

pub fn net_to_string(net: &NetworkParams) -> String {
    let mut out = String::new();
    out.push_str("comil-net v1\n");
    let _ = writeln!(
        out,
        "layout {} {} {}",
        net.layout.input, net.layout.hidden, net.layout.output
    );
    out.push_str("activation tanh\n");
    let _ = writeln!(out, "w1 {}", join_floats(&net.w1));
    let _ = writeln!(out, "b1 {}", join_floats(&net.b1));
    let _ = writeln!(out, "w2 {}", join_floats(&net.w2));
    let _ = writeln!(out, "b2 {}", join_floats(&net.b2));
    out
}

/// Parses a network record from the front of `lines`, consuming its lines.
fn net_from_lines<'a, I: Iterator<Item = &'a str>>(lines: &mut I) -> Result<NetworkParams> {
    if lines.next() != Some("comil-net v1") {
        return Err(Error::Parse("not a comil-net v1 record".into()));
    }
    let mut next_field = |key: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("net record ends before {key}")))?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| Error::Parse(format!("expected net field {key}, got: {line}")))
    };
    let sizes = parse_usizes(&next_field("layout")?)?;
    if sizes.len() != 3 {
        return Err(Error::Parse("net layout needs three sizes".into()));
    }
    let layout = Layout::new(sizes[0], sizes[1], sizes[2])?;
    let act = next_field("activation")?;
    if act != "tanh" {
        return Err(Error::Parse(format!("unknown activation: {act}")));
    }
    let w1 = parse_floats(&next_field("w1")?)?;
    let b1 = parse_floats(&next_field("b1")?)?;
    let w2 = parse_floats(&next_field("w2")?)?;
    let b2 = parse_floats(&next_field("b2")?)?;
    if w1.len() != layout.hidden * layout.input
        || b1.len() != layout.hidden
        || w2.len() != layout.output * layout.hidden
        || b2.len() != layout.output
    {
        return Err(Error::Parse("net parameter lengths do not match the layout".into()));
    }
    let net = NetworkParams { layout, activation: Activation::Tanh, w1, b1, w2, b2 };
    if !net.is_finite() {
        return Err(Error::Parse("net record holds non-finite values".into()));
    }
    Ok(net)
}

pub fn net_from_str(s: &str) -> Result<NetworkParams> {
    net_from_lines(&mut s.lines())
}

pub fn marginal_to_string(m: &MarginalModel) -> String {
    let mut out = String::new();
    out.push_str("comil-marginal v1\n");
    let _ = writeln!(out, "k {}", m.components());
    let _ = writeln!(out, "agent_dims {}", join_usizes(m.agent_dims()));
    let _ = writeln!(out, "log_spreads {}", join_floats(m.log_spreads()));
    out.push_str(&net_to_string(m.net()));
    out
}

pub fn marginal_from_str(s: &str) -> Result<MarginalModel> {
    let mut lines = s.lines();
    if lines.next() != Some("comil-marginal v1") {
        return Err(Error::Parse("not a comil-marginal v1 record".into()));
    }
    let mut next_field = |key: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("marginal record ends before {key}")))?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| Error::Parse(format!("expected marginal field {key}, got: {line}")))
    };
    let k = parse_usize(&next_field("k")?)?;
    let agent_dims = parse_usizes(&next_field("agent_dims")?)?;
    let log_spreads = parse_floats(&next_field("log_spreads")?)?;
    let net = net_from_lines(&mut lines)?;
    MarginalModel::from_parts(net, log_spreads, k, agent_dims)
}

fn gmm_to_string(g: &GaussianMixtureCopula) -> String {
    let mut out = String::new();
    out.push_str("comil-gmcopula v1\n");
    let _ = writeln!(out, "g {}", g.components());
    let _ = writeln!(out, "coords {}", g.coords());
    out.push_str(&net_to_string(g.net()));
    out
}

fn gmm_from_str(s: &str) -> Result<GaussianMixtureCopula> {
    let mut lines = s.lines();
    if lines.next() != Some("comil-gmcopula v1") {
        return Err(Error::Parse("not a comil-gmcopula v1 record".into()));
    }
    let g_line = lines
        .next()
        .and_then(|l| l.strip_prefix("g "))
        .ok_or_else(|| Error::Parse("gmcopula record is missing g".into()))?;
    let coords_line = lines
        .next()
        .and_then(|l| l.strip_prefix("coords "))
        .ok_or_else(|| Error::Parse("gmcopula record is missing coords".into()))?;
    let net = net_from_lines(&mut lines)?;
    GaussianMixtureCopula::from_parts(net, parse_usize(g_line)?, parse_usize(coords_line)?)
}

/// Any copula variant to bytes; text records except the binary KDE.
pub fn copula_to_bytes(c: &Copula) -> Vec<u8> {
    match c {
        Copula::Independence { coords } => format!("comil-indep v1\ncoords {coords}\n").into_bytes(),
        Copula::Gaussian(g) => format!("comil-gausscop v1\nrho {}\n", g.rho()).into_bytes(),
        Copula::Kde(k) => k.to_bytes(),
        Copula::GaussianMixture(g) => gmm_to_string(g).into_bytes(),
    }
}

pub fn copula_from_bytes(bytes: &[u8]) -> Result<Copula> {
    if bytes.starts_with(b"comil-kde v1\n") {
        return Ok(Copula::Kde(KdeCopula::from_bytes(bytes)?));
    }
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Parse("copula record is not valid text".into()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("comil-indep v1") => {
            let coords = lines
                .next()
                .and_then(|l| l.strip_prefix("coords "))
                .ok_or_else(|| Error::Parse("independence record is missing coords".into()))?;
            let coords = parse_usize(coords)?;
            if coords == 0 {
                return Err(Error::Parse("independence copula needs >= 1 coordinate".into()));
            }
            Ok(Copula::Independence { coords })
        }
        Some("comil-gausscop v1") => {
            let rho = lines
                .next()
                .and_then(|l| l.strip_prefix("rho "))
                .ok_or_else(|| Error::Parse("gaussian copula record is missing rho".into()))?;
            Ok(Copula::Gaussian(GaussianCopula::new(parse_float(rho)?)?))
        }
        Some("comil-gmcopula v1") => Ok(Copula::GaussianMixture(gmm_from_str(text)?)),
        _ => Err(Error::Parse("unrecognized copula record".into())),
    }
}

/// Bundle layout: manifest lines, then two sections
/// `section <name> <byte len>\n<bytes>\n`, then `end\n`.
pub fn policy_to_bytes(p: &CopulaPolicy) -> Vec<u8> {
    let mut out = Vec::new();
    let mut manifest = String::new();
    manifest.push_str("comil-policy v1\n");
    let _ = writeln!(manifest, "copula {}", p.copula().kind());
    let _ = writeln!(manifest, "coords {}", p.coords());
    let _ = writeln!(manifest, "k {}", p.marginal().components());
    let g = match p.copula() {
        Copula::GaussianMixture(g) => g.components(),
        _ => 0,
    };
    let _ = writeln!(manifest, "g {g}");
    let _ = writeln!(manifest, "agent_dims {}", join_usizes(p.marginal().agent_dims()));
    let n = p.norm();
    let _ = writeln!(manifest, "state_min {}", join_floats(&n.state_min));
    let _ = writeln!(manifest, "state_max {}", join_floats(&n.state_max));
    let _ = writeln!(manifest, "action_min {}", join_floats(&n.action_min));
    let _ = writeln!(manifest, "action_max {}", join_floats(&n.action_max));
    out.extend_from_slice(manifest.as_bytes());
    for (name, bytes) in [
        ("marginal", marginal_to_string(p.marginal()).into_bytes()),
        ("copula", copula_to_bytes(p.copula())),
    ] {
        out.extend_from_slice(format!("section {name} {}\n", bytes.len()).as_bytes());
        out.extend_from_slice(&bytes);
        out.push(b'\n');
    }
    out.extend_from_slice(b"end\n");
    out
}

/// Reads one `\n`-terminated header line as UTF-8.
fn take_line<'a>(bytes: &mut &'a [u8]) -> Result<&'a str> {
    let pos = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Parse("policy bundle truncated mid-line".into()))?;
    let (line, rest) = bytes.split_at(pos);
    *bytes = &rest[1..];
    std::str::from_utf8(line).map_err(|_| Error::Parse("policy bundle header is not text".into()))
}

pub fn policy_from_bytes(bytes: &[u8]) -> Result<CopulaPolicy> {
    let mut rest = bytes;
    if take_line(&mut rest)? != "comil-policy v1" {
        return Err(Error::Parse("not a comil-policy v1 bundle".into()));
    }
    let mut kind = None;
    let mut coords = None;
    let mut k = None;
    let mut g = None;
    let mut agent_dims = None;
    let mut state_min = None;
    let mut state_max = None;
    let mut action_min = None;
    let mut action_max = None;
    let mut marginal: Option<MarginalModel> = None;
    let mut copula: Option<Copula> = None;
    loop {
        let line = take_line(&mut rest)?.to_string();
        if line == "end" {
            break;
        }
        let (key, val) = line
            .split_once(' ')
            .ok_or_else(|| Error::Parse(format!("bundle line without value: {line}")))?;
        match key {
            "copula" => kind = Some(val.to_string()),
            "coords" => coords = Some(parse_usize(val)?),
            "k" => k = Some(parse_usize(val)?),
            "g" => g = Some(parse_usize(val)?),
            "agent_dims" => agent_dims = Some(parse_usizes(val)?),
            "state_min" => state_min = Some(parse_floats(val)?),
            "state_max" => state_max = Some(parse_floats(val)?),
            "action_min" => action_min = Some(parse_floats(val)?),
            "action_max" => action_max = Some(parse_floats(val)?),
            "section" => {
                let (name, len) = val
                    .split_once(' ')
                    .ok_or_else(|| Error::Parse("section line needs a name and length".into()))?;
                let len = parse_usize(len)?;
                if rest.len() < len + 1 {
                    return Err(Error::Parse(format!("section {name} truncated")));
                }
                let (body, after) = rest.split_at(len);
                if after[0] != b'\n' {
                    return Err(Error::Parse(format!("section {name} not newline-terminated")));
                }
                rest = &after[1..];
                match name {
                    "marginal" => {
                        let text = std::str::from_utf8(body).map_err(|_| {
                            Error::Parse("marginal section is not valid text".into())
                        })?;
                        marginal = Some(marginal_from_str(text)?);
                    }
                    "copula" => copula = Some(copula_from_bytes(body)?),
                    other => return Err(Error::Parse(format!("unknown section: {other}"))),
                }
            }
            other => return Err(Error::Parse(format!("unknown bundle key: {other}"))),
        }
    }
    let missing = |what: &str| Error::Parse(format!("policy bundle is missing {what}"));
    let marginal = marginal.ok_or_else(|| missing("its marginal section"))?;
    let copula = copula.ok_or_else(|| missing("its copula section"))?;
    let norm = Normalization {
        state_min: state_min.ok_or_else(|| missing("state_min"))?,
        state_max: state_max.ok_or_else(|| missing("state_max"))?,
        action_min: action_min.ok_or_else(|| missing("action_min"))?,
        action_max: action_max.ok_or_else(|| missing("action_max"))?,
    };
    // The manifest must agree with the embedded sections.
    let manifest_ok = kind.as_deref() == Some(copula.kind())
        && coords == Some(marginal.coords())
        && k == Some(marginal.components())
        && agent_dims.as_deref() == Some(marginal.agent_dims())
        && g == Some(match &copula {
            Copula::GaussianMixture(gm) => gm.components(),
            _ => 0,
        });
    if !manifest_ok {
        return Err(Error::Parse("policy manifest contradicts its sections".into()));
    }
    CopulaPolicy::new(marginal, copula, norm)
}

pub fn write_policy(path: &Path, p: &CopulaPolicy) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, policy_to_bytes(p))?;
    Ok(())
}

pub fn read_policy(path: &Path) -> Result<CopulaPolicy> {
    policy_from_bytes(&std::fs::read(path)?)
}
