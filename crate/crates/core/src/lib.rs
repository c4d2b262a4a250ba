pub mod corpus;
pub mod decoder;
pub mod encoders;
pub mod evaluation;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod params;
pub mod training;

/// Book chapters compiled as doc-tests so their snippets stay in sync.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/corpus.md")]
    pub struct Corpus;
    #[doc = include_str!("../../../book/src/encoders.md")]
    pub struct Encoders;
    #[doc = include_str!("../../../book/src/decoder.md")]
    pub struct DecoderChapter;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub struct Evaluation;
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub struct Experiments;
}
