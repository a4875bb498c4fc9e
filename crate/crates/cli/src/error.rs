use crackfield::constitutive::ConstitutiveError;
use crackfield::fracture::FractureError;
use crackfield::imaging::ImagingError;
use crackfield::io::IoError;
use crackfield::kinematics::KinematicsError;
use crackfield::pipeline::PipelineError;
use crackfield::regions::RegionError;
use crackfield::synth::SynthError;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 3;
    pub const INPUT: i32 = 4;
    pub const NUMERICAL: i32 = 5;
    pub const STRICT: i32 = 6;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("strict mode: {0}")]
    Strict(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Input(_) => exit::INPUT,
            CliError::Numerical(_) => exit::NUMERICAL,
            CliError::Strict(_) => exit::STRICT,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Kinematics(k) => k.into(),
            e if e.is_config() => CliError::Config(e.to_string()),
            e => CliError::Input(e.to_string()),
        }
    }
}

impl From<KinematicsError> for CliError {
    fn from(e: KinematicsError) -> Self {
        match e {
            KinematicsError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Kinematics(k) => k.into(),
            e => CliError::Config(e.to_string()),
        }
    }
}

impl From<RegionError> for CliError {
    fn from(e: RegionError) -> Self {
        match e {
            RegionError::InvalidSpec(_) => CliError::Config(e.to_string()),
            RegionError::MissingField(_)
            | RegionError::IdMismatch(..)
            | RegionError::UnitMismatch(_) => CliError::Input(e.to_string()),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ConstitutiveError> for CliError {
    fn from(e: ConstitutiveError) -> Self {
        match e {
            ConstitutiveError::BadModulus(_) => CliError::Config(e.to_string()),
            ConstitutiveError::Empty => CliError::Input(e.to_string()),
        }
    }
}

impl From<FractureError> for CliError {
    fn from(e: FractureError) -> Self {
        match e {
            FractureError::BadWindow(..) | FractureError::Material(_) => {
                CliError::Config(e.to_string())
            }
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ImagingError> for CliError {
    fn from(e: ImagingError) -> Self {
        match e {
            ImagingError::Config(_) => CliError::Config(e.to_string()),
            e => CliError::Input(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(e) => e.into(),
            PipelineError::Synth(e) => e.into(),
            PipelineError::Kinematics(e) => e.into(),
            PipelineError::Constitutive(e) => e.into(),
            PipelineError::Region(e) => e.into(),
            PipelineError::Fracture(e) => e.into(),
            PipelineError::Imaging(e) => e.into(),
        }
    }
}
