//! The desk-scale setup shared by the canary study and the classification
//! check: synthetic data, a tokenizer trained on the pre-training text, and
//! one pre-trained encoder.

use std::sync::OnceLock;

use entmem::corpus::Corpus;
use entmem::model::{ModelConfig, Objective, Parameters};
use entmem::synth::{synthesize, SynthConfig, SynthData};
use entmem::tokenizer::{train_on_texts, TokenizerModel};
use entmem::training::{pretrain_mlm, Setup, TrainConfig};

pub const VOCAB: usize = 800;
pub const PRETRAIN_EPOCHS: usize = 15;

pub struct Base {
    pub data: SynthData,
    pub tok: TokenizerModel,
    pub params: Parameters,
}

fn build() -> Base {
    let data = synthesize(&SynthConfig::default()).expect("synthetic data");
    let tok = train_on_texts(data.pretrain.iter().map(|d| d.text.as_str()), VOCAB).expect("tokenizer");
    let model = ModelConfig { max_seq: 128, ..ModelConfig::new(2, 4, 32, 64, VOCAB) };
    let pre = Corpus::new(data.pretrain.clone(), 0.0, 0).expect("pre-training corpus");
    let mut train = TrainConfig::new(Setup::Full, Objective::Mlm, 2);
    train.epochs = PRETRAIN_EPOCHS;
    train.learning_rate = 1e-3;
    let (params, _) = pretrain_mlm(&pre, &tok, &model, &train).expect("pre-training");
    Base { data, tok, params }
}

pub fn base() -> &'static Base {
    static BASE: OnceLock<Base> = OnceLock::new();
    BASE.get_or_init(build)
}
