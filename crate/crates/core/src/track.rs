//! Waypoint tracks and their on-disk format.
//!
//! A track file is a TOML document:
//!
//! ```toml
//! name = "loop"
//! waypoints = [[2.5, 0.0, 2.0], [0.0, 2.5, 2.0]]
//! d_w = 1.0
//! laps = 3
//! noise_sigma = 0.1
//!
//! [workspace]
//! min = [-20.0, -20.0, 0.0]
//! max = [20.0, 20.0, 10.0]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::Vec3;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for Workspace {
    fn default() -> Self {
        Workspace {
            min: [-20.0, -20.0, 0.0],
            max: [20.0, 20.0, 10.0],
        }
    }
}

impl Workspace {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSpec {
    pub name: String,
    pub waypoints: Vec<[f64; 3]>,
    /// Waypoint radius, m.
    pub d_w: f64,
    #[serde(default)]
    pub workspace: Workspace,
    /// Continuous laps required for success.
    pub laps: usize,
    /// Per-axis std of the Gaussian perturbation applied to waypoints at reset, m.
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
}

fn default_noise_sigma() -> f64 {
    0.1
}

const BUILTIN: &[(&str, &str)] = &[
    ("loop", include_str!("../tracks/loop.toml")),
    ("eight", include_str!("../tracks/eight.toml")),
    ("arrow", include_str!("../tracks/arrow.toml")),
    ("star", include_str!("../tracks/star.toml")),
    ("lotus", include_str!("../tracks/lotus.toml")),
    ("candy", include_str!("../tracks/candy.toml")),
];

impl TrackSpec {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::config(format!(
                "track `{}`: at least 2 waypoints required",
                self.name
            )));
        }
        if !(self.d_w > 0.0) {
            return Err(Error::config(format!("track `{}`: d_w must be > 0", self.name)));
        }
        if self.laps < 1 {
            return Err(Error::config(format!("track `{}`: laps must be >= 1", self.name)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config(format!(
                "track `{}`: noise_sigma must be >= 0",
                self.name
            )));
        }
        if (0..3).any(|k| !(self.workspace.min[k] < self.workspace.max[k])) {
            return Err(Error::config(format!(
                "track `{}`: workspace min must be below max on every axis",
                self.name
            )));
        }
        for (k, w) in self.waypoints.iter().enumerate() {
            if !self.workspace.contains(&Vec3::from(*w)) {
                return Err(Error::config(format!(
                    "track `{}`: waypoint {k} lies outside the workspace",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let track: TrackSpec = toml::from_str(s).map_err(|e| Error::config(e.to_string()))?;
        track.validate()?;
        Ok(track)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("track serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// One of the bundled tracks. The five racing layouts are geometric
    /// approximations only.
    pub fn builtin(name: &str) -> Option<Self> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, src)| Self::from_toml_str(src).expect("bundled track is valid"))
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    /// Resolves `builtin:<name>` or a filesystem path.
    pub fn resolve(spec: &str) -> Result<Self> {
        match spec.strip_prefix("builtin:") {
            Some(name) => Self::builtin(name).ok_or_else(|| {
                let known: Vec<_> = Self::builtin_names().collect();
                Error::config(format!(
                    "unknown builtin track `{name}` (known: {})",
                    known.join(", ")
                ))
            }),
            None => Self::load(spec),
        }
    }

    pub fn waypoint(&self, k: usize) -> Vec3 {
        Vec3::from(self.waypoints[k % self.waypoints.len()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_load() {
        for name in TrackSpec::builtin_names() {
            let t = TrackSpec::builtin(name).unwrap();
            assert_eq!(t.name, name);
            assert!(t.waypoints.len() >= 4);
        }
    }

    #[test]
    fn rejects_bad_tracks() {
        let base = TrackSpec::builtin("loop").unwrap();

        let mut t = base.clone();
        t.waypoints.truncate(1);
        assert!(t.validate().is_err());

        let mut t = base.clone();
        t.d_w = 0.0;
        assert!(t.validate().is_err());

        let mut t = base.clone();
        t.laps = 0;
        assert!(t.validate().is_err());

        let mut t = base;
        t.waypoints[0] = [100.0, 0.0, 1.0];
        assert!(t.validate().is_err());
    }

    #[test]
    fn unknown_field_is_rejected() {
        let src = "name='x'\nwaypoints=[[0,0,1],[1,0,1]]\nd_w=1.0\nlaps=1\ncolour='red'\n";
        assert!(TrackSpec::from_toml_str(src).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.toml");
        let t = TrackSpec::builtin("star").unwrap();
        t.save(&path).unwrap();
        assert_eq!(TrackSpec::load(&path).unwrap(), t);
    }

    #[test]
    fn missing_file_names_path() {
        let err = TrackSpec::resolve("/nonexistent/track.toml").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/track.toml"));
    }
}
