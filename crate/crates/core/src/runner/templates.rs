//! Named geometry templates: map a scanned parameter to a molecular
//! configuration.

use crate::error::{GeometryError, RunnerError};
use crate::geometry::MolecularConfiguration;
use crate::runner::config::{GeometrySection, RunConfig};

/// Geometry source of a run: a parametrized template scanned by the geometry
/// walkers, or an explicit list of configurations.
#[derive(Debug, Clone)]
pub enum GeometrySource {
    /// Symmetric diatomic with the bond length as the parameter.
    Diatomic {
        charges: [u32; 2],
        n_up: usize,
        n_dn: usize,
    },
    /// Hydrogen-like chain along z with uniform spacing as the parameter.
    Chain {
        n_atoms: usize,
        charge: u32,
        n_up: usize,
        n_dn: usize,
    },
    Fixed(Vec<MolecularConfiguration>),
}

impl GeometrySource {
    pub fn from_config(config: &RunConfig) -> Result<GeometrySource, RunnerError> {
        let section = &config.geometry;
        if !section.fixed.is_empty() {
            let configs = section
                .fixed
                .iter()
                .map(|g| {
                    MolecularConfiguration::new(
                        g.positions.clone(),
                        g.charges.clone(),
                        section.n_up,
                        section.n_dn,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(GeometrySource::Fixed(configs));
        }
        match section.template.as_str() {
            "diatomic" => Ok(GeometrySource::Diatomic {
                charges: [section.charges[0], section.charges[1]],
                n_up: section.n_up,
                n_dn: section.n_dn,
            }),
            "hchain" => Ok(GeometrySource::Chain {
                n_atoms: section.n_atoms,
                charge: *section.charges.first().unwrap_or(&1),
                n_up: section.n_up,
                n_dn: section.n_dn,
            }),
            other => Err(RunnerError::Config(format!(
                "unknown geometry template '{other}'"
            ))),
        }
    }

    pub fn is_scanned(&self) -> bool {
        !matches!(self, GeometrySource::Fixed(_))
    }

    /// Realizes the template at a parameter value.
    pub fn realize(&self, param: f64) -> Result<MolecularConfiguration, GeometryError> {
        match self {
            GeometrySource::Diatomic {
                charges,
                n_up,
                n_dn,
            } => MolecularConfiguration::new(
                vec![[0.0, 0.0, -param / 2.0], [0.0, 0.0, param / 2.0]],
                charges.to_vec(),
                *n_up,
                *n_dn,
            ),
            GeometrySource::Chain {
                n_atoms,
                charge,
                n_up,
                n_dn,
            } => {
                let offset = (*n_atoms as f64 - 1.0) / 2.0;
                let positions = (0..*n_atoms)
                    .map(|i| [0.0, 0.0, (i as f64 - offset) * param])
                    .collect();
                MolecularConfiguration::new(positions, vec![*charge; *n_atoms], *n_up, *n_dn)
            }
            GeometrySource::Fixed(configs) => {
                // The parameter indexes the list.
                let idx = (param.round() as usize).min(configs.len().saturating_sub(1));
                Ok(configs[idx].clone())
            }
        }
    }

    /// Maximum nuclear charge the template can produce.
    pub fn max_charge(&self) -> u32 {
        match self {
            GeometrySource::Diatomic { charges, .. } => charges[0].max(charges[1]),
            GeometrySource::Chain { charge, .. } => *charge,
            GeometrySource::Fixed(configs) => configs
                .iter()
                .flat_map(|c| c.charges().iter().copied())
                .max()
                .unwrap_or(1),
        }
    }

    pub fn n_nuclei(&self) -> usize {
        match self {
            GeometrySource::Diatomic { .. } => 2,
            GeometrySource::Chain { n_atoms, .. } => *n_atoms,
            GeometrySource::Fixed(configs) => configs[0].n_nuclei(),
        }
    }

    /// Parses the CLI geometry spec: `template:param` (e.g. `diatomic:1.4`)
    /// against this source, or a bare parameter value.
    pub fn parse_spec(&self, spec: &str) -> Result<MolecularConfiguration, RunnerError> {
        let param_text = match spec.split_once(':') {
            Some((name, value)) => {
                let expected = match self {
                    GeometrySource::Diatomic { .. } => "diatomic",
                    GeometrySource::Chain { .. } => "hchain",
                    GeometrySource::Fixed(_) => "fixed",
                };
                if name != expected {
                    return Err(RunnerError::Config(format!(
                        "geometry spec '{spec}' names template '{name}' but the run uses '{expected}'"
                    )));
                }
                value
            }
            None => spec,
        };
        let param: f64 = param_text
            .parse()
            .map_err(|_| RunnerError::Config(format!("cannot parse geometry spec '{spec}'")))?;
        Ok(self.realize(param)?)
    }

    /// Realizes the geometry section without walking: for `Fixed` sources
    /// the full list, otherwise the bin midpoints.
    pub fn initial_configs(
        &self,
        section: &GeometrySection,
    ) -> Result<Vec<MolecularConfiguration>, RunnerError> {
        match self {
            GeometrySource::Fixed(configs) => Ok(configs.clone()),
            _ => {
                let n = section.n_walkers;
                let width = (section.param_max - section.param_min) / n as f64;
                (0..n)
                    .map(|i| {
                        let mid = section.param_min + width * (i as f64 + 0.5);
                        self.realize(mid).map_err(RunnerError::from)
                    })
                    .collect()
            }
        }
    }
}
