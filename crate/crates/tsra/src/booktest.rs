// The guide's code snippets run as doc-tests: each chapter is attached to an
// empty module via #[doc = include_str!(...)], so `cargo test --doc` compiles
// and executes every ```rust block in book/src/. cfg(doctest) keeps the text
// out of the compiled library.

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/deviation.md")]
    mod deviation {}
    #[doc = include_str!("../../../book/src/pooling.md")]
    mod pooling {}
    #[doc = include_str!("../../../book/src/alignment-head.md")]
    mod alignment_head {}
    #[doc = include_str!("../../../book/src/modality-selection.md")]
    mod modality_selection {}
    #[doc = include_str!("../../../book/src/jitter.md")]
    mod jitter {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/end-to-end.md")]
    mod end_to_end {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
