//! Simulation designs read from TOML.

use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use tobitlvm::simulate::{Censoring, CensoringLaw};
use tobitlvm::{ParameterMap, Side};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Design {
    /// Model file, relative to the design file.
    pub model: Option<PathBuf>,
    pub n: Option<usize>,
    /// Natural-scale values by parameter name. Unlisted parameters take
    /// loadings and regressions 1, intercepts and covariances 0, variances 1.
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub censor: Vec<CensorEntry>,
    /// Parameters shown by `study`; all when empty.
    #[serde(default)]
    pub report: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CensorEntry {
    pub variable: String,
    pub side: SideName,
    pub bound: Option<f64>,
    pub normal: Option<NormalLaw>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideName {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalLaw {
    pub mean: f64,
    pub sd: f64,
}

impl Design {
    pub fn read(path: &Path) -> Result<Design, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut d: Design = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if let Some(m) = d.model.take() {
            let base = path.parent().unwrap_or(Path::new("."));
            d.model = Some(base.join(m));
        }
        Ok(d)
    }

    /// Internal parameter vector for `pm`.
    pub fn theta(&self, pm: &ParameterMap) -> Result<Vec<f64>, String> {
        let mut natural = pm.natural(&pm.default_values());
        for (name, v) in &self.parameters {
            let t = pm
                .index_of(name)
                .ok_or_else(|| format!("design sets unknown parameter '{name}'"))?;
            natural[t] = *v;
        }
        pm.internal(&natural).map_err(|e| e.to_string())
    }

    pub fn censoring(&self) -> Result<Vec<Censoring>, String> {
        self.censor
            .iter()
            .map(|c| {
                let law = match (c.bound, c.normal) {
                    (Some(b), None) => CensoringLaw::Fixed(b),
                    (None, Some(NormalLaw { mean, sd })) if sd >= 0.0 => CensoringLaw::Normal { mean, sd },
                    _ => {
                        return Err(format!(
                            "censoring of '{}' needs exactly one of 'bound' or a non-negative 'normal'",
                            c.variable
                        ))
                    }
                };
                Ok(Censoring {
                    variable: c.variable.clone(),
                    side: match c.side {
                        SideName::Left => Side::Left,
                        SideName::Right => Side::Right,
                    },
                    law,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_design() {
        let d: Design = toml::from_str(
            r#"
            model = "m.lvm"
            n = 10
            report = ["Y<-X"]
            [parameters]
            "Y<-X" = -0.5
            [[censor]]
            variable = "Y"
            side = "right"
            normal = { mean = 1.0, sd = 0.5 }
            "#,
        )
        .unwrap();
        assert_eq!(d.n, Some(10));
        assert_eq!(d.parameters["Y<-X"], -0.5);
        let c = d.censoring().unwrap();
        assert_eq!(c[0].law, CensoringLaw::Normal { mean: 1.0, sd: 0.5 });
        assert!(toml::from_str::<Design>("bogus = 1").is_err());
    }
}
