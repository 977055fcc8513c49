use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-12;

/// Finite MDP with explicit dynamics: `transition[s][a][s']` is p(s'|s,a) and
/// `reward[s][a][s']` is r(s,a,s').
///
/// The serialized form is a TOML document whose keys match the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
    pub discount: f64,
    pub terminal: Vec<usize>,
    pub initial_distribution: Vec<f64>,
}

impl MdpSpec {
    /// Checks every structural invariant. Constructors in this crate call
    /// this before handing out a spec.
    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.num_states, self.num_actions);
        if ns == 0 || na == 0 {
            return Err(Error::arg("num_states and num_actions must be positive"));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::arg(format!(
                "discount {} outside [0, 1)",
                self.discount
            )));
        }
        check_shape(&self.transition, ns, na, "transition")?;
        check_shape(&self.reward, ns, na, "reward")?;
        for (s, rows) in self.transition.iter().enumerate() {
            for (a, row) in rows.iter().enumerate() {
                if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    return Err(Error::arg(format!(
                        "p(.|{s},{a}) has entries outside [0,1]"
                    )));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > ROW_TOL {
                    return Err(Error::arg(format!("p(.|{s},{a}) sums to {total}")));
                }
            }
        }
        for rows in &self.reward {
            for row in rows {
                if row.iter().any(|r| !r.is_finite()) {
                    return Err(Error::arg("reward table has non-finite entries"));
                }
            }
        }
        if self.initial_distribution.len() != ns {
            return Err(Error::arg(
                "initial_distribution length differs from num_states",
            ));
        }
        let init: f64 = self.initial_distribution.iter().sum();
        if (init - 1.0).abs() > ROW_TOL || self.initial_distribution.iter().any(|&p| p < 0.0) {
            return Err(Error::arg(format!("initial_distribution sums to {init}")));
        }
        for &t in &self.terminal {
            if t >= ns {
                return Err(Error::arg(format!("terminal state {t} out of range")));
            }
            for a in 0..na {
                let row = &self.transition[t][a];
                if (row[t] - 1.0).abs() > ROW_TOL || self.reward[t][a][t] != 0.0 {
                    return Err(Error::arg(format!(
                        "terminal state {t} must self-loop with zero reward"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal.contains(&state)
    }

    /// Largest reward magnitude that any transition with positive
    /// probability can produce.
    pub fn max_abs_reward(&self) -> f64 {
        let mut m: f64 = 0.0;
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                for s2 in 0..self.num_states {
                    if self.transition[s][a][s2] > 0.0 {
                        m = m.max(self.reward[s][a][s2].abs());
                    }
                }
            }
        }
        m
    }

    /// Largest reward (signed) reachable with positive probability.
    pub fn max_reward(&self) -> f64 {
        let mut m = f64::NEG_INFINITY;
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                for s2 in 0..self.num_states {
                    if self.transition[s][a][s2] > 0.0 {
                        m = m.max(self.reward[s][a][s2]);
                    }
                }
            }
        }
        m
    }

    /// `r_max / (1 - γ)`: no true discounted return can exceed this.
    pub fn value_bound(&self) -> f64 {
        self.max_reward().max(0.0) / (1.0 - self.discount)
    }

    /// States reachable from the initial distribution under some policy.
    pub fn reachable_states(&self) -> Vec<bool> {
        let mut seen: Vec<bool> = self.initial_distribution.iter().map(|&p| p > 0.0).collect();
        let mut stack: Vec<usize> = (0..self.num_states).filter(|&s| seen[s]).collect();
        while let Some(s) = stack.pop() {
            for a in 0..self.num_actions {
                for (s2, &p) in self.transition[s][a].iter().enumerate() {
                    if p > 0.0 && !seen[s2] {
                        seen[s2] = true;
                        stack.push(s2);
                    }
                }
            }
        }
        seen
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: MdpSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}

fn check_shape(table: &[Vec<Vec<f64>>], ns: usize, na: usize, what: &str) -> Result<()> {
    if table.len() != ns
        || table
            .iter()
            .any(|rows| rows.len() != na || rows.iter().any(|r| r.len() != ns))
    {
        return Err(Error::arg(format!(
            "{what} table must be [{ns}][{na}][{ns}]"
        )));
    }
    Ok(())
}

/// Incremental builder used by the environment catalog and tests.
#[derive(Debug, Clone)]
pub struct MdpBuilder {
    spec: MdpSpec,
}

impl MdpBuilder {
    pub fn new(num_states: usize, num_actions: usize, discount: f64) -> Self {
        let mut initial = vec![0.0; num_states];
        if num_states > 0 {
            initial[0] = 1.0;
        }
        Self {
            spec: MdpSpec {
                num_states,
                num_actions,
                transition: vec![vec![vec![0.0; num_states]; num_actions]; num_states],
                reward: vec![vec![vec![0.0; num_states]; num_actions]; num_states],
                discount,
                terminal: Vec::new(),
                initial_distribution: initial,
            },
        }
    }

    /// Adds probability mass `p` for `s --a--> next` with reward `r`.
    pub fn add(mut self, s: usize, a: usize, next: usize, p: f64, r: f64) -> Self {
        self.spec.transition[s][a][next] += p;
        self.spec.reward[s][a][next] = r;
        self
    }

    pub fn terminal(mut self, s: usize) -> Self {
        for a in 0..self.spec.num_actions {
            self.spec.transition[s][a] = vec![0.0; self.spec.num_states];
            self.spec.transition[s][a][s] = 1.0;
            self.spec.reward[s][a] = vec![0.0; self.spec.num_states];
        }
        if !self.spec.terminal.contains(&s) {
            self.spec.terminal.push(s);
        }
        self
    }

    pub fn initial(mut self, dist: Vec<f64>) -> Self {
        self.spec.initial_distribution = dist;
        self
    }

    pub fn build(self) -> Result<MdpSpec> {
        self.spec.validate()?;
        Ok(self.spec)
    }
}
