use std::fmt;

/// A command failure tagged with its exit code class.
#[derive(Debug)]
pub enum Failure {
    /// Bad or missing input files. Exit code 2.
    Input(anyhow::Error),
    /// Flags or config that cannot work with the given inputs. Exit code 3.
    Config(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) => 2,
            Self::Config(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Input(e) | Self::Config(e) => write!(f, "{e:#}"),
        }
    }
}

pub type CmdResult<T> = Result<T, Failure>;

pub trait Classify<T> {
    fn input(self) -> CmdResult<T>;
    fn config(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Input(e.into()))
    }

    fn config(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Config(e.into()))
    }
}
