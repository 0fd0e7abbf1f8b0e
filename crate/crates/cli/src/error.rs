use derender_core::Error;

/// A core error tagged with the module that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{module}: {source}")]
pub struct StageError {
    pub module: &'static str,
    #[source]
    pub source: Error,
    client: bool,
}

impl StageError {
    /// Error caused by the caller's input.
    pub fn input(module: &'static str, source: Error) -> Self {
        Self { module, source, client: true }
    }

    /// Error from a processing stage; blamed on the input only for kinds that
    /// describe bad arguments.
    pub fn stage(module: &'static str, source: Error) -> Self {
        let client = matches!(
            source,
            Error::Schema { .. }
                | Error::InvalidArgument(_)
                | Error::UnknownGlyph(_)
                | Error::UnknownFont { .. }
                | Error::Empty(_)
        );
        Self { module, source, client }
    }

    pub fn invalid(module: &'static str, msg: impl Into<String>) -> Self {
        Self::input(module, Error::InvalidArgument(msg.into()))
    }

    pub fn is_client_error(&self) -> bool {
        self.client
    }

    /// Offending document field, for schema errors.
    pub fn field(&self) -> Option<&str> {
        match &self.source {
            Error::Schema { field, .. } => Some(field),
            _ => None,
        }
    }
}

pub(crate) trait Tag<T> {
    fn tag(self, module: &'static str) -> Result<T, StageError>;
}

impl<T> Tag<T> for derender_core::Result<T> {
    fn tag(self, module: &'static str) -> Result<T, StageError> {
        self.map_err(|e| StageError::stage(module, e))
    }
}
