//! Scenario description: network sizes, traffic processes, lossy links and
//! the device-to-UAV association.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field} must be at least 1")]
    NonPositive { field: &'static str },
    #[error("{field} has {got} entries, expected 1 or {expected}")]
    WrongLength {
        field: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("{field}[{index}] = {value} is not a probability in [0, 1)")]
    BadProbability {
        field: &'static str,
        index: usize,
        value: f64,
    },
    #[error("period of device {index} must be at least 1")]
    BadPeriod { index: usize },
    #[error("area side lengths must be positive and finite")]
    BadArea,
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing scenario: {0}")]
    Parse(#[from] toml::de::Error),
}

/// A per-device quantity that may be written as one value for every device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerDevice<T> {
    Scalar(T),
    List(Vec<T>),
}

impl<T: Copy> PerDevice<T> {
    pub fn get(&self, m: usize) -> T {
        match self {
            PerDevice::Scalar(v) => *v,
            PerDevice::List(vs) => vs[m],
        }
    }

    pub fn to_vec(&self, len: usize) -> Vec<T> {
        (0..len).map(|m| self.get(m)).collect()
    }

    fn check_len(&self, field: &'static str, expected: usize) -> Result<(), ConfigError> {
        match self {
            PerDevice::List(vs) if vs.len() != expected => Err(ConfigError::WrongLength {
                field,
                got: vs.len(),
                expected,
            }),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum TrafficModel {
    /// A fresh packet exists whenever the device is sampled.
    GenerateAtWill,
    /// Device `m` produces packets only at multiples of `periods[m]`.
    Periodic { periods: PerDevice<u32> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Association {
    /// Each device attaches to the closest UAV (lowest index on ties).
    Nearest,
    /// Devices are dealt to UAVs in index order regardless of geometry.
    ExplicitEqualSplit,
}

fn default_area() -> [f64; 2] {
    [1000.0, 1000.0]
}

fn default_association() -> Association {
    Association::Nearest
}

fn zero_loss() -> PerDevice<f64> {
    PerDevice::Scalar(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_devices: usize,
    pub num_uavs: usize,
    /// Access-link channels per UAV.
    pub sample_channels: usize,
    /// Backhaul channels at the base station.
    pub update_channels: usize,
    /// Slots per episode.
    pub horizon: u32,
    pub traffic: TrafficModel,
    #[serde(default = "zero_loss")]
    pub sample_loss: PerDevice<f64>,
    #[serde(default = "zero_loss")]
    pub update_loss: PerDevice<f64>,
    #[serde(default = "default_area")]
    pub area: [f64; 2],
    #[serde(default = "default_association")]
    pub association: Association,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    /// Lossless, generate-at-will scenario with an equal split of devices.
    pub fn ideal(num_devices: usize, num_uavs: usize, l: usize, k: usize, horizon: u32) -> Self {
        ScenarioConfig {
            num_devices,
            num_uavs,
            sample_channels: l,
            update_channels: k,
            horizon,
            traffic: TrafficModel::GenerateAtWill,
            sample_loss: zero_loss(),
            update_loss: zero_loss(),
            area: default_area(),
            association: Association::ExplicitEqualSplit,
            seed: 0,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, v) in [
            ("num_devices", self.num_devices),
            ("num_uavs", self.num_uavs),
            ("sample_channels", self.sample_channels),
            ("update_channels", self.update_channels),
            ("horizon", self.horizon as usize),
        ] {
            if v == 0 {
                return Err(ConfigError::NonPositive { field });
            }
        }
        let m = self.num_devices;
        for (field, probs) in [("sample_loss", &self.sample_loss), ("update_loss", &self.update_loss)] {
            probs.check_len(field, m)?;
            for (index, value) in probs.to_vec(m).into_iter().enumerate() {
                if !(0.0..1.0).contains(&value) {
                    return Err(ConfigError::BadProbability { field, index, value });
                }
            }
        }
        if let TrafficModel::Periodic { periods } = &self.traffic {
            periods.check_len("periods", m)?;
            if let Some(index) = periods.to_vec(m).iter().position(|&p| p == 0) {
                return Err(ConfigError::BadPeriod { index });
            }
        }
        if !self.area.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(ConfigError::BadArea);
        }
        Ok(())
    }

    pub fn sample_loss_of(&self, m: usize) -> f64 {
        self.sample_loss.get(m)
    }

    pub fn update_loss_of(&self, m: usize) -> f64 {
        self.update_loss.get(m)
    }

    /// True when every link is lossless and traffic is generate-at-will.
    pub fn is_ideal(&self) -> bool {
        let m = self.num_devices;
        matches!(self.traffic, TrafficModel::GenerateAtWill)
            && self.sample_loss.to_vec(m).iter().all(|&p| p == 0.0)
            && self.update_loss.to_vec(m).iter().all(|&p| p == 0.0)
    }

    /// Short label used as the `scenario` column of result tables.
    pub fn fingerprint(&self) -> String {
        let kind = if self.is_ideal() { "ideal" } else { "general" };
        format!(
            "M{}-N{}-L{}-K{}-T{}-{}",
            self.num_devices, self.num_uavs, self.sample_channels, self.update_channels, self.horizon, kind
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    fn dist2(&self, other: &Point) -> f64 {
        (self.x - other.x).powi(2) + (self.y - other.y).powi(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub device_positions: Vec<Point>,
    pub uav_positions: Vec<Point>,
    pub tbs_position: Point,
    /// Serving UAV of each device.
    pub assignment: Vec<usize>,
    /// Devices served by each UAV, ascending.
    pub cells: Vec<Vec<usize>>,
}

impl Topology {
    pub fn num_devices(&self) -> usize {
        self.assignment.len()
    }

    pub fn num_uavs(&self) -> usize {
        self.cells.len()
    }

    /// Builds a topology from an explicit assignment, with all nodes at the origin.
    pub fn from_assignment(assignment: Vec<usize>, num_uavs: usize) -> Self {
        let origin = Point { x: 0.0, y: 0.0 };
        let cells = cells_of(&assignment, num_uavs);
        Topology {
            device_positions: vec![origin; assignment.len()],
            uav_positions: vec![origin; num_uavs],
            tbs_position: origin,
            assignment,
            cells,
        }
    }
}

fn cells_of(assignment: &[usize], num_uavs: usize) -> Vec<Vec<usize>> {
    let mut cells = vec![Vec::new(); num_uavs];
    for (m, &n) in assignment.iter().enumerate() {
        cells[n].push(m);
    }
    cells
}

/// Places devices and UAVs uniformly over the area and associates devices.
/// The base station sits at the centre of the area.
pub fn build_topology<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Topology {
    let [w, h] = config.area;
    let mut place = |count: usize| -> Vec<Point> {
        (0..count)
            .map(|_| Point {
                x: rng.random::<f64>() * w,
                y: rng.random::<f64>() * h,
            })
            .collect()
    };
    let device_positions = place(config.num_devices);
    let uav_positions = place(config.num_uavs);
    let assignment: Vec<usize> = match config.association {
        Association::ExplicitEqualSplit => (0..config.num_devices).map(|m| m % config.num_uavs).collect(),
        Association::Nearest => device_positions
            .iter()
            .map(|d| {
                let mut best = 0;
                for (n, u) in uav_positions.iter().enumerate().skip(1) {
                    if d.dist2(u) < d.dist2(&uav_positions[best]) {
                        best = n;
                    }
                }
                best
            })
            .collect(),
    };
    let cells = cells_of(&assignment, config.num_uavs);
    Topology {
        device_positions,
        uav_positions,
        tbs_position: Point { x: w / 2.0, y: h / 2.0 },
        assignment,
        cells,
    }
}

/// Generation slot of the newest packet device `m` holds at slot `t`.
///
/// Periodic devices hold a bootstrap packet generated at slot 0 until their
/// first period elapses.
pub fn freshest_gen_time(traffic: &TrafficModel, m: usize, t: u32) -> u32 {
    match traffic {
        TrafficModel::GenerateAtWill => t,
        TrafficModel::Periodic { periods } => {
            let p = periods.get(m);
            (t / p) * p
        }
    }
}

/// One Bernoulli link use; `true` when the packet gets through.
pub fn draw_delivery<R: Rng + ?Sized>(loss_prob: f64, rng: &mut R) -> bool {
    rng.random::<f64>() >= loss_prob
}

impl fmt::Display for Association {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Association::Nearest => f.write_str("nearest"),
            Association::ExplicitEqualSplit => f.write_str("explicit-equal-split"),
        }
    }
}
