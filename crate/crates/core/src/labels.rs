//! Label vocabularies and the side × team decomposition of group labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Two teams, decomposed group labels, fixed actor count.
    Volleyball,
    /// One pooled group, group and individual tasks only, any actor count.
    Generic,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Volleyball => "volleyball",
            Mode::Generic => "generic",
        })
    }
}

/// Label algebra and actor policy for one dataset family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub mode: Mode,
    pub group_labels: Vec<String>,
    #[serde(default)]
    pub side_labels: Vec<String>,
    #[serde(default)]
    pub team_labels: Vec<String>,
    pub individual_labels: Vec<String>,
    /// Required actor count per frame; `None` allows any count.
    pub actors: Option<usize>,
    /// Reject frames whose actor count differs from `actors`. When off,
    /// volleyball frames with other counts are split at `⌊N/2⌋`.
    #[serde(default = "default_true")]
    pub strict_actors: bool,
    /// Weight of the side and team losses.
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_true() -> bool {
    true
}

fn default_beta() -> f64 {
    1.0
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl TaskConfig {
    /// The eight side-sensitive volleyball categories with nine individual
    /// actions and twelve actors per frame.
    pub fn volleyball() -> Self {
        Self {
            mode: Mode::Volleyball,
            group_labels: strings(&[
                "right set",
                "right spike",
                "right pass",
                "right win-point",
                "left set",
                "left spike",
                "left pass",
                "left win-point",
            ]),
            side_labels: strings(&["left", "right"]),
            team_labels: strings(&["pass", "win", "set", "spike"]),
            individual_labels: strings(&[
                "waiting", "setting", "digging", "falling", "spiking", "blocking", "jumping", "moving", "standing",
            ]),
            actors: Some(12),
            strict_actors: true,
            beta: 1.0,
        }
    }

    pub fn generic(group_labels: Vec<String>, individual_labels: Vec<String>) -> Self {
        Self {
            mode: Mode::Generic,
            group_labels,
            side_labels: Vec::new(),
            team_labels: Vec::new(),
            individual_labels,
            actors: None,
            strict_actors: false,
            beta: 1.0,
        }
    }

    /// Collective-activity layout: crossing and walking merged into "moving".
    pub fn cad() -> Self {
        let labels = strings(&["moving", "waiting", "queueing", "talking"]);
        Self::generic(labels.clone(), labels)
    }

    pub fn num_groups(&self) -> usize {
        self.group_labels.len()
    }

    pub fn num_individual(&self) -> usize {
        self.individual_labels.len()
    }

    pub fn is_volleyball(&self) -> bool {
        self.mode == Mode::Volleyball
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_labels.is_empty() || self.individual_labels.is_empty() {
            return Err(Error::Config("group and individual vocabularies must be nonempty".into()));
        }
        for vocab in [&self.group_labels, &self.side_labels, &self.team_labels, &self.individual_labels] {
            let mut seen = std::collections::HashSet::new();
            if let Some(dup) = vocab.iter().find(|l| !seen.insert(l.as_str())) {
                return Err(Error::Config(format!("duplicate label {dup:?}")));
            }
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be a non-negative real, got {}", self.beta)));
        }
        if self.actors == Some(0) {
            return Err(Error::Config("actor count must be positive".into()));
        }
        if self.mode == Mode::Volleyball {
            if self.side_labels.len() != 2 {
                return Err(Error::Config("volleyball mode needs exactly two side labels".into()));
            }
            let expected = self.side_labels.len() * self.team_labels.len();
            if self.group_labels.len() != expected {
                return Err(Error::Config(format!(
                    "{} group labels cannot decompose into {} sides × {} team activities",
                    self.group_labels.len(),
                    self.side_labels.len(),
                    self.team_labels.len()
                )));
            }
            let mut hit = vec![false; expected];
            for g in 0..self.group_labels.len() {
                let (s, t) = self.split_name(&self.group_labels[g])?;
                let cell = s * self.team_labels.len() + t;
                if std::mem::replace(&mut hit[cell], true) {
                    return Err(Error::Config(format!(
                        "group label {:?} repeats a side/team pair",
                        self.group_labels[g]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parses "side team" where the team word equals a team label or
    /// extends it with a hyphenated suffix ("win-point" → "win").
    fn split_name(&self, name: &str) -> Result<(usize, usize)> {
        let (side, team) = name
            .split_once(' ')
            .ok_or_else(|| Error::Config(format!("group label {name:?} is not of the form \"side team\"")))?;
        let s = self
            .side_labels
            .iter()
            .position(|l| l == side)
            .ok_or_else(|| Error::Config(format!("group label {name:?}: unknown side {side:?}")))?;
        let t = self
            .team_labels
            .iter()
            .position(|l| team == l || team.strip_prefix(l.as_str()).is_some_and(|r| r.starts_with('-')))
            .ok_or_else(|| Error::Config(format!("group label {name:?}: unknown team activity {team:?}")))?;
        Ok((s, t))
    }

    fn check_group(&self, group: usize) -> Result<()> {
        if group >= self.group_labels.len() {
            return Err(Error::Label(format!(
                "group id {group} out of range for {} classes",
                self.group_labels.len()
            )));
        }
        Ok(())
    }

    fn require_volleyball(&self, op: &str) -> Result<()> {
        if self.mode != Mode::Volleyball {
            return Err(Error::Config(format!("{op} needs volleyball mode")));
        }
        Ok(())
    }

    /// `(side_id, team_id)` of a group label.
    pub fn decompose(&self, group: usize) -> Result<(usize, usize)> {
        self.require_volleyball("decompose")?;
        self.check_group(group)?;
        self.split_name(&self.group_labels[group])
    }

    pub fn compose(&self, side: usize, team: usize) -> Result<usize> {
        self.require_volleyball("compose")?;
        if side >= self.side_labels.len() || team >= self.team_labels.len() {
            return Err(Error::Label(format!("no group label for side {side}, team {team}")));
        }
        for g in 0..self.group_labels.len() {
            if self.split_name(&self.group_labels[g])? == (side, team) {
                return Ok(g);
            }
        }
        Err(Error::Label(format!("no group label for side {side}, team {team}")))
    }

    /// The same team activity performed by the other side.
    pub fn flip_group(&self, group: usize) -> Result<usize> {
        let (side, team) = self.decompose(group)?;
        self.compose(1 - side, team)
    }

    pub fn group_id(&self, name: &str) -> Result<usize> {
        self.group_labels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::Label(format!("unknown group label {name:?}")))
    }

    pub fn group_name(&self, group: usize) -> Result<&str> {
        self.check_group(group)?;
        Ok(&self.group_labels[group])
    }

    pub fn individual_id(&self, name: &str) -> Result<usize> {
        self.individual_labels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::Label(format!("unknown individual label {name:?}")))
    }

    pub fn side_id(&self, name: &str) -> Result<usize> {
        self.side_labels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::Label(format!("unknown side label {name:?}")))
    }

    pub fn team_id(&self, name: &str) -> Result<usize> {
        self.team_labels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::Label(format!("unknown team label {name:?}")))
    }
}
