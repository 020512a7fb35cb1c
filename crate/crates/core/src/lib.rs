//! LoRA / QLoRA fine-tuning of a tiny decoder-only transformer for
//! physician-letter generation, with anonymizing data preparation and a
//! ROUGE / paired t-test / rating evaluation toolkit.

pub mod cli;
pub mod codec;
pub mod dataprep;
pub mod eval;
pub mod lora;
pub mod model;
pub mod quant;
pub mod tensor;
pub mod trainer;
