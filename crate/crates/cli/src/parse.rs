//! Small command-line grammars: mixture descriptions, lattice ranges, time
//! lists, and tangent overrides.

use meanflow::oracle::{FlowTangent, GmmComponent, GmmSpec};
use meanflow::Tensor;

use crate::CliError;

/// Parses a mixture description.
///
/// Components are separated by `;`, each `weight:mean…:variance` with the
/// mean coordinates space-separated: `"0.5:0 0:1;0.5:2 2:1"` is two
/// equal-weight 2D Gaussians. The shorthand `"ring:K:RADIUS:VAR"` expands
/// to K equal-weight components on a circle.
pub fn parse_gmm(text: &str) -> Result<GmmSpec, CliError> {
    let bad = |why: String| CliError::config(format!("mixture \"{text}\": {why}"));
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(bad("empty description".into()));
    }
    if let Some(rest) = trimmed.strip_prefix("ring:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("ring shorthand wants ring:K:RADIUS:VAR".into()));
        }
        let k: usize = parts[0]
            .parse()
            .map_err(|_| bad(format!("bad component count {:?}", parts[0])))?;
        let radius: f64 = parts[1]
            .parse()
            .map_err(|_| bad(format!("bad radius {:?}", parts[1])))?;
        let var: f64 = parts[2]
            .parse()
            .map_err(|_| bad(format!("bad variance {:?}", parts[2])))?;
        let means = ring_means(k, radius).map_err(bad)?;
        let pairs = means.into_iter().map(|m| (m, var)).collect();
        return GmmSpec::equal_weights(pairs).map_err(|e| bad(e.to_string()));
    }
    let mut components = Vec::new();
    for (i, part) in trimmed.split(';').enumerate() {
        let fields: Vec<&str> = part.trim().split(':').collect();
        if fields.len() != 3 {
            return Err(bad(format!(
                "component {} must be weight:mean…:variance, got {part:?}",
                i + 1
            )));
        }
        let weight: f64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad weight {:?}", fields[0])))?;
        let mean: Vec<f64> = fields[1]
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| bad(format!("bad mean coordinate {v:?}")))
            })
            .collect::<Result<_, _>>()?;
        if mean.is_empty() {
            return Err(bad(format!("component {} has an empty mean", i + 1)));
        }
        let var: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad variance {:?}", fields[2])))?;
        components.push(GmmComponent {
            weight,
            mean: Tensor::vector(mean),
            var,
        });
    }
    GmmSpec::new(components).map_err(|e| bad(e.to_string()))
}

fn ring_means(k: usize, radius: f64) -> Result<Vec<Tensor>, String> {
    if k == 0 {
        return Err("ring needs at least one component".into());
    }
    Ok((0..k)
        .map(|j| {
            let angle = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
            Tensor::vector(vec![radius * angle.cos(), radius * angle.sin()])
        })
        .collect())
}

/// An inclusive linspace: `lo:hi:count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Range {
    /// The `count` evenly spaced values from `lo` to `hi` inclusive.
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        (0..self.count)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.count - 1) as f64)
            .collect()
    }
}

/// Parses `lo:hi:count`.
pub fn parse_range(text: &str) -> Result<Range, CliError> {
    let bad = |why: String| CliError::config(format!("range \"{text}\": {why}"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(bad("expected lo:hi:count".into()));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|_| bad(format!("bad lower bound {:?}", parts[0])))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|_| bad(format!("bad upper bound {:?}", parts[1])))?;
    let count: usize = parts[2]
        .parse()
        .map_err(|_| bad(format!("bad count {:?}", parts[2])))?;
    if count == 0 {
        return Err(bad("count must be at least 1".into()));
    }
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(bad(format!("bounds [{lo}, {hi}] must be finite and ordered")));
    }
    Ok(Range { lo, hi, count })
}

/// A (z, r, t) lattice description: `z=lo:hi:n,t=lo:hi:n,r=lo:hi:n`.
///
/// The z range applies to every coordinate; the r range is in fractions of
/// t, so `r=0:0.9:10` probes r from 0 to 0.9·t at each t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub z: Range,
    pub t: Range,
    pub r_frac: Range,
}

/// Parses a lattice description.
pub fn parse_grid(text: &str) -> Result<GridSpec, CliError> {
    let bad = |why: String| CliError::config(format!("grid \"{text}\": {why}"));
    let mut z = None;
    let mut t = None;
    let mut r = None;
    for part in text.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=lo:hi:count, got {part:?}")))?;
        let range = parse_range(value)?;
        match key.trim() {
            "z" => z = Some(range),
            "t" => t = Some(range),
            "r" => r = Some(range),
            other => return Err(bad(format!("unknown axis {other:?}"))),
        }
    }
    let z = z.ok_or_else(|| bad("missing z axis".into()))?;
    let t = t.ok_or_else(|| bad("missing t axis".into()))?;
    let r_frac = r.ok_or_else(|| bad("missing r axis".into()))?;
    if t.lo <= 0.0 || t.hi > 1.0 {
        return Err(bad(format!(
            "t range ({}, {}] must sit inside (0, 1]",
            t.lo, t.hi
        )));
    }
    if r_frac.lo < 0.0 || r_frac.hi > 1.0 {
        return Err(bad("r fractions must sit inside [0, 1]".into()));
    }
    Ok(GridSpec { z, t, r_frac })
}

impl GridSpec {
    /// Expands to lattice nodes (z, r, t) for `dim`-dimensional states
    /// (every coordinate of z runs over the z range; dimensions above 2 are
    /// rejected to keep lattice sizes sane).
    pub fn nodes(&self, dim: usize) -> Result<Vec<(Tensor, f64, f64)>, CliError> {
        let states: Vec<Tensor> = match dim {
            1 => self.z.values().into_iter().map(|v| Tensor::vector(vec![v])).collect(),
            2 => {
                let vs = self.z.values();
                let mut out = Vec::with_capacity(vs.len() * vs.len());
                for &a in &vs {
                    for &b in &vs {
                        out.push(Tensor::vector(vec![a, b]));
                    }
                }
                out
            }
            other => {
                return Err(CliError::config(format!(
                    "grids support 1D and 2D states, got dimension {other}"
                )))
            }
        };
        let mut nodes = Vec::new();
        for t in self.t.values() {
            for frac in self.r_frac.values() {
                let r = frac * t;
                for z in &states {
                    nodes.push((z.clone(), r, t));
                }
            }
        }
        Ok(nodes)
    }
}

/// Parses a comma-separated list of times in (0, 1].
pub fn parse_t_list(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = |why: String| CliError::config(format!("time list \"{text}\": {why}"));
    if text.trim().is_empty() {
        return Err(bad("empty list".into()));
    }
    let mut out = Vec::new();
    for part in text.split(',') {
        let v: f64 = part
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad time {part:?}")))?;
        if !(v > 0.0 && v <= 1.0) {
            return Err(bad(format!(
                "t = {v} outside (0, 1]; averages at t = 0 have no window"
            )));
        }
        out.push(v);
    }
    Ok(out)
}

/// A tangent override `v,R,T`: the state slot always carries the field's
/// own velocity; R and T scale the probe of each time argument. The
/// along-the-flow tangent is `v,0,1`.
pub fn parse_tangent(text: &str) -> Result<FlowTangent, CliError> {
    let bad = |why: String| CliError::config(format!("tangent \"{text}\": {why}"));
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(bad("expected v,R,T".into()));
    }
    if parts[0].trim() != "v" {
        return Err(bad(format!(
            "the state slot must be v, got {:?}",
            parts[0]
        )));
    }
    let r_coeff: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| bad(format!("bad r coefficient {:?}", parts[1])))?;
    let t_coeff: f64 = parts[2]
        .trim()
        .parse()
        .map_err(|_| bad(format!("bad t coefficient {:?}", parts[2])))?;
    Ok(FlowTangent { r_coeff, t_coeff })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmm_grammar_parses_components() {
        let gmm = parse_gmm("0.5:0 0:1;0.5:2 2:1").unwrap();
        assert_eq!(gmm.num_components(), 2);
        assert_eq!(gmm.dim(), 2);
        let single = parse_gmm("1:1:0.25").unwrap();
        assert_eq!(single.dim(), 1);
        assert_eq!(single.components()[0].var, 0.25);
    }

    #[test]
    fn gmm_grammar_rejects_malformed_input() {
        for text in ["", "1:1", "x:1:1", "1::1", "0.5:0:1", "1:1:abc"] {
            let err = parse_gmm(text).unwrap_err();
            assert_eq!(err.code, crate::EXIT_CONFIG, "{text:?}");
        }
        assert!(parse_gmm("0.6:0:1;0.6:1:1").is_err());
    }

    #[test]
    fn ring_shorthand_matches_manual_means() {
        let gmm = parse_gmm("ring:4:2:0.1").unwrap();
        assert_eq!(gmm.num_components(), 4);
        let means: Vec<&[f64]> = gmm.components().iter().map(|c| c.mean.data()).collect();
        assert!((means[0][0] - 2.0).abs() < 1e-12);
        assert!((means[1][1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ranges_and_grids_expand() {
        let r = parse_range("0:1:5").unwrap();
        assert_eq!(r.values(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_range("2:2:1").unwrap().values(), vec![2.0]);

        let grid = parse_grid("z=-1:1:3,t=0.5:1:2,r=0:0.5:2").unwrap();
        let nodes = grid.nodes(1).unwrap();
        assert_eq!(nodes.len(), 3 * 2 * 2);
        assert!(nodes.iter().all(|(_, r, t)| r <= t));
        let nodes2 = grid.nodes(2).unwrap();
        assert_eq!(nodes2.len(), 9 * 2 * 2);
        assert!(grid.nodes(3).is_err());
    }

    #[test]
    fn bad_grids_are_config_errors() {
        for text in [
            "z=0:1:3",
            "z=0:1:3,t=0:1:2,r=0:1:2",
            "z=0:1:3,t=0.5:1:2,r=0:1.5:2",
            "z=0:1:0,t=0.5:1:2,r=0:1:2",
            "q=0:1:3,t=0.5:1:2,r=0:1:2",
        ] {
            assert_eq!(parse_grid(text).unwrap_err().code, crate::EXIT_CONFIG, "{text:?}");
        }
    }

    #[test]
    fn t_lists_parse_and_reject() {
        assert_eq!(parse_t_list("0.5,0.7,1.0").unwrap(), vec![0.5, 0.7, 1.0]);
        assert!(parse_t_list("").is_err());
        assert!(parse_t_list("0.0,0.5").is_err());
        assert!(parse_t_list("0.5,nope").is_err());
    }

    #[test]
    fn tangents_parse() {
        let correct = parse_tangent("v,0,1").unwrap();
        assert_eq!(correct, FlowTangent::along_flow());
        let broken = parse_tangent("v,1,1").unwrap();
        assert_eq!(broken.r_coeff, 1.0);
        assert!(parse_tangent("w,0,1").is_err());
        assert!(parse_tangent("v,0").is_err());
    }
}
