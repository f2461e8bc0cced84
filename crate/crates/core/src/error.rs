use voxclone_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    ManifestParse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("invalid utterance: {0}")]
    InvalidUtterance(String),
    #[error("empty corpus: no utterances to build a vocabulary from")]
    EmptyCorpus,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("audio: {0}")]
    Audio(String),
    #[error("enhancement hook violated its contract: {0}")]
    HookContract(String),
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("model: {0}")]
    Model(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("non-finite loss term `{term}` at step {step}")]
    NonFiniteLoss { term: &'static str, step: u64 },
    #[error("unknown speaker `{speaker}` (known: {known})")]
    UnknownSpeaker { speaker: String, known: String },
    #[error("unknown language `{0}`")]
    UnknownLanguage(String),
    #[error("speaker id `{0}` appears in both datasets")]
    SpeakerCollision(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
