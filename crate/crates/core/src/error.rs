use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("mesher failed to conform to loop {loop_index}: {detail}")]
    MesherConformity { loop_index: usize, detail: String },

    #[error("mesh invariant violated: {0}")]
    MeshInvariant(String),

    #[error("deformation rejected: triangle {triangle} area ratio {ratio:.3e} below quality floor {floor}")]
    QualityFailure {
        triangle: usize,
        ratio: f64,
        floor: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("patch equilibration failed at vertex {vertex}: {detail}")]
    PatchSolve { vertex: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
