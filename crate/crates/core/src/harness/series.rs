use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::plant::LoadCaseId;
use crate::{Error, NUM_BLADES};

use super::Mode;

pub const SERIES_FORMAT: &str = "ftipc-series";
pub const SERIES_VERSION: u32 = 1;

/// Per-sample flag bits in [`SampleRow::flags`].
pub mod flags {
    pub const SATURATED: u32 = 1;
    pub const GAIN_KEPT: u32 = 2;
    pub const DEGENERATE_FACTOR: u32 = 4;
    pub const SWITCHED: u32 = 8;
    pub const MISSING_BANK_ENTRY: u32 = 16;
}

/// Run description written as `# key=value` lines above the CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub mode: Mode,
    pub load_case: LoadCaseId,
    pub seed: u64,
    pub ts: f64,
    pub period: usize,
    /// Faulty blade (1-based), 0 when fault-free.
    pub fault_blade: usize,
    pub stuck_angle: f64,
    pub fault_onset: u64,
    /// Nominal fault sample `T0/Ts`, also the start of the post-fault window.
    pub fault_sample: u64,
    /// Persistence count used for confirmed crossings.
    pub confirm: u32,
}

impl SeriesMeta {
    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("format", SERIES_FORMAT.to_string()),
            ("version", SERIES_VERSION.to_string()),
            ("mode", self.mode.to_string()),
            ("load_case", self.load_case.to_string()),
            ("seed", self.seed.to_string()),
            ("ts", format!("{:?}", self.ts)),
            ("period", self.period.to_string()),
            ("fault_blade", self.fault_blade.to_string()),
            ("stuck_angle", format!("{:?}", self.stuck_angle)),
            ("fault_onset", self.fault_onset.to_string()),
            ("fault_sample", self.fault_sample.to_string()),
            ("confirm", self.confirm.to_string()),
        ]
    }

    fn from_pairs(pairs: &[(String, String)]) -> Result<Self, Error> {
        let get = |key: &str| -> Result<&str, Error> {
            pairs
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Series(format!("missing metadata key {key:?}")))
        };
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, Error> {
            v.parse().map_err(|_| Error::Series(format!("bad value {v:?} for {key:?}")))
        }
        if get("format")? != SERIES_FORMAT {
            return Err(Error::Series(format!("not a {SERIES_FORMAT} file")));
        }
        let version: u32 = parse("version", get("version")?)?;
        if version != SERIES_VERSION {
            return Err(Error::Series(format!("unsupported series version {version}")));
        }
        Ok(SeriesMeta {
            mode: get("mode")?.parse()?,
            load_case: get("load_case")?.parse()?,
            seed: parse("seed", get("seed")?)?,
            ts: parse("ts", get("ts")?)?,
            period: parse("period", get("period")?)?,
            fault_blade: parse("fault_blade", get("fault_blade")?)?,
            stuck_angle: parse("stuck_angle", get("stuck_angle")?)?,
            fault_onset: parse("fault_onset", get("fault_onset")?)?,
            fault_sample: parse("fault_sample", get("fault_sample")?)?,
            confirm: parse("confirm", get("confirm")?)?,
        })
    }
}

/// One CSV row. Loads in kN·m, angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleRow {
    pub k: u64,
    pub y1: f64,
    pub y2: f64,
    pub y3: f64,
    /// Pitch commands.
    pub uref1: f64,
    pub uref2: f64,
    pub uref3: f64,
    /// Physical pitch after the fault.
    pub pitch1: f64,
    pub pitch2: f64,
    pub pitch3: f64,
    /// Measured pitch.
    pub meas1: f64,
    pub meas2: f64,
    pub meas3: f64,
    /// Estimator residuals and thresholds.
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub rbar1: f64,
    pub rbar2: f64,
    pub rbar3: f64,
    #[serde(rename = "dFD")]
    pub d_fd: usize,
    /// 1P coefficients applied in this sample.
    pub theta1_sin: f64,
    pub theta1_cos: f64,
    pub theta2_sin: f64,
    pub theta2_cos: f64,
    pub theta3_sin: f64,
    pub theta3_cos: f64,
    /// Repetitive-control pitch contributions.
    pub sprc1: f64,
    pub sprc2: f64,
    pub sprc3: f64,
    /// Identification excitation.
    pub prbs1: f64,
    pub prbs2: f64,
    pub prbs3: f64,
    /// Identification prediction errors.
    pub ident1: f64,
    pub ident2: f64,
    pub ident3: f64,
    pub flags: u32,
}

impl SampleRow {
    pub fn y(&self) -> [f64; NUM_BLADES] {
        [self.y1, self.y2, self.y3]
    }

    pub fn residuals(&self) -> [f64; NUM_BLADES] {
        [self.r1, self.r2, self.r3]
    }

    pub fn thresholds(&self) -> [f64; NUM_BLADES] {
        [self.rbar1, self.rbar2, self.rbar3]
    }

    pub fn thetas(&self) -> [[f64; 2]; NUM_BLADES] {
        [[self.theta1_sin, self.theta1_cos], [self.theta2_sin, self.theta2_cos], [self.theta3_sin, self.theta3_cos]]
    }

    pub fn set_triples(&mut self, y: [f64; 3], uref: [f64; 3], pitch: [f64; 3], meas: [f64; 3]) {
        [self.y1, self.y2, self.y3] = y;
        [self.uref1, self.uref2, self.uref3] = uref;
        [self.pitch1, self.pitch2, self.pitch3] = pitch;
        [self.meas1, self.meas2, self.meas3] = meas;
    }

    pub fn set_fdi(&mut self, r: [f64; 3], rbar: [f64; 3], d_fd: usize) {
        [self.r1, self.r2, self.r3] = r;
        [self.rbar1, self.rbar2, self.rbar3] = rbar;
        self.d_fd = d_fd;
    }

    pub fn set_sprc(&mut self, theta: [[f64; 2]; 3], sprc: [f64; 3], prbs: [f64; 3], ident: [f64; 3]) {
        [[self.theta1_sin, self.theta1_cos], [self.theta2_sin, self.theta2_cos], [self.theta3_sin, self.theta3_cos]] = theta;
        [self.sprc1, self.sprc2, self.sprc3] = sprc;
        [self.prbs1, self.prbs2, self.prbs3] = prbs;
        [self.ident1, self.ident2, self.ident3] = ident;
    }
}

/// Recorded run: metadata plus one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub meta: SeriesMeta,
    pub rows: Vec<SampleRow>,
}

impl TimeSeries {
    pub fn new(meta: SeriesMeta) -> Self {
        TimeSeries { meta, rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Load of `blade` (0-based) over rows `range`.
    pub fn load(&self, blade: usize, range: std::ops::Range<usize>) -> Vec<f64> {
        self.rows[range].iter().map(|r| r.y()[blade]).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), Error> {
        for (k, v) in self.meta.to_pairs() {
            writeln!(out, "# {k}={v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, Error> {
        let mut reader = BufReader::new(input);
        let mut pairs = Vec::new();
        let header = loop {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                return Err(Error::Series("missing CSV header".into()));
            }
            match line.strip_prefix('#') {
                Some(rest) => {
                    let (k, v) = rest
                        .trim()
                        .split_once('=')
                        .ok_or_else(|| Error::Series(format!("malformed metadata line {line:?}")))?;
                    pairs.push((k.trim().to_string(), v.trim().to_string()));
                }
                None => break line,
            }
        };
        let meta = SeriesMeta::from_pairs(&pairs)?;
        let body = header.as_bytes().chain(reader);
        let mut r = csv::Reader::from_reader(body);
        let rows = r.deserialize().collect::<Result<Vec<SampleRow>, _>>()?;
        Ok(TimeSeries { meta, rows })
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_file(path: &Path) -> Result<Self, Error> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}
