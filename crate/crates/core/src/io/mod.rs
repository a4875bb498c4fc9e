//! File formats: particle and analysis tables, raw voxel volumes, point-cloud
//! export and the pipeline configuration.
//!
//! Tables are comma-separated UTF-8 with LF line endings and an exact header
//! row. Some carry a leading `# kind key=value ...` metadata line.

mod config;
mod tables;
mod volume;
mod vtk;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::kinematics::KinematicsError;

pub use config::{
    AffineSynthConfig, EstimatorSection, FractureSection, ImagingSection, LefmSynthConfig,
    MaterialSection, PipelineConfig, RunSection, SteppedSynthConfig, SynthSection, VolumeSection,
    ENV_PREFIX,
};
pub use tables::{
    read_ctod_profile, read_defgrad_table, read_detections, read_faces, read_key_values,
    read_particle_table, read_regression_points, read_scalar_field, write_ctod_profile,
    write_defgrad_table, write_detections, write_faces, write_key_values, write_particle_table,
    write_regression, write_regression_points, write_scalar_field, FaceTable, ParticleRow,
    ParticleTable, RegressionPoint,
};
pub use volume::{decode_raw_volume, encode_raw_volume, RAW_HEADER_LEN, RAW_MAGIC};
pub use vtk::export_point_cloud;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"CFVOL1\"")]
    BadMagic { found: Vec<u8> },
    #[error("header truncated: {got} of 64 bytes")]
    TruncatedHeader { got: usize },
    #[error("payload truncated: header declares {expected} bytes, found {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("{extra} trailing bytes after the {expected}-byte payload")]
    TrailingBytes { expected: usize, extra: usize },
    #[error("reserved header byte {offset} is {value}, must be 0")]
    NonZeroPadding { offset: usize, value: u8 },
    #[error("unknown channel tag {0}")]
    BadChannel(u8),
    #[error("invalid volume header: {0}")]
    BadVolumeHeader(String),
    #[error("{table} header mismatch: expected `{expected}`, found `{found}`")]
    Header {
        table: &'static str,
        expected: String,
        found: String,
    },
    #[error("line {line}: expected {expected} fields, found {got}")]
    Arity {
        line: u64,
        expected: usize,
        got: usize,
    },
    #[error("line {line}, column `{column}`: cannot parse `{value}`")]
    Field {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: {message}")]
    Record { line: u64, message: String },
    #[error("malformed table: {0}")]
    Csv(String),
    #[error("config syntax error: {0}")]
    ConfigSyntax(String),
    #[error("unknown config key `{key}`")]
    UnknownConfigKey { key: String, message: String },
    #[error("invalid config value: {0}")]
    ConfigValue(String),
    #[error("environment override {var}: {reason}")]
    EnvOverride { var: String, reason: String },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

impl IoError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        IoError::Io {
            context: context.into(),
            source,
        }
    }

    /// True for configuration problems (syntax, unknown keys, bad values).
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            IoError::ConfigSyntax(_)
                | IoError::UnknownConfigKey { .. }
                | IoError::ConfigValue(_)
                | IoError::EnvOverride { .. }
        )
    }
}

/// Shortest decimal text that reads back to `v` rounded to 9 significant
/// digits.
pub fn fmt_sig9(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let r: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    fmt_exact(r)
}

/// Shortest round-trip text for `v`, switching to exponent form for very
/// small or large magnitudes.
pub fn fmt_exact(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub fn open_read(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| IoError::io(format!("open {}", path.display()), e))
}

/// Write through a buffered file, creating parent directories.
pub fn write_file(
    path: &Path,
    f: impl FnOnce(&mut dyn Write) -> Result<(), IoError>,
) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| IoError::io(format!("create {}", dir.display()), e))?;
    }
    let file =
        File::create(path).map_err(|e| IoError::io(format!("create {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush()
        .map_err(|e| IoError::io(format!("write {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_rounds_and_round_trips() {
        assert_eq!(fmt_sig9(1.0), "1");
        assert_eq!(fmt_sig9(123.456789012345), "123.456789");
        assert_eq!(fmt_sig9(-0.000123456789012), "-0.000123456789");
        assert_eq!(fmt_sig9(2.5e-7), "2.5e-7");
        for v in [0.1, 1.0 / 3.0, 987654321.123, -4.2e-9] {
            let back: f64 = fmt_sig9(v).parse().unwrap();
            assert!(((back - v) / v).abs() < 5e-9);
        }
        for v in [0.1, 1.0 / 3.0, 1e-300, 6.02e23, -0.0] {
            assert_eq!(fmt_exact(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
