//! Synthetic two-object scenes, their captions, and the binding-corruption
//! corpus generator.

mod corpus;
mod image;
mod scene;
mod vocab;

pub use self::image::{render_scene, Image, CHANNELS, PIXELS};
pub use corpus::{
    gen_corpus, heldout_scenes, manifest_path, read_corpus, single_scenes, training_pairs,
    tuning_scenes, write_corpus, Corpus, CorpusConfig, Sample, DATASET_MAGIC, HELDOUT_COUNT,
    TUNING_COUNT,
};
pub use scene::{
    Color, ObjectSpec, SceneSpec, Shape, BACKGROUND, BOX, BOX_LEFT, BOX_TOP, CANVAS, PALETTE,
};
pub use vocab::{
    color_token, detokenize, make_prompt, shape_token, token_color, token_shape, tokenize,
    PairSlots, PromptTemplate, Slots, BOS, EOS, MAX_LEN, NO_SLOT, PAD, TOK_A, TOK_AND, VOCAB_SIZE,
};
