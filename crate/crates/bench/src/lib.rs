//! Fixtures shared by the criterion benchmarks.

use fldrop_core::data::gen_synthetic;
use fldrop_core::model::{init_model, LabeledExample, ModelSpec, ParamVector};

pub struct TrainingFixture {
    pub spec: ModelSpec,
    pub params: ParamVector,
    pub shard: Vec<LabeledExample>,
}

/// A client-sized shard of the standard synthetic data and a fresh model.
pub fn training_fixture(hidden: Vec<usize>) -> TrainingFixture {
    let src = gen_synthetic(10, 16, 20, 3.0, 7).expect("valid synthetic parameters");
    let spec = ModelSpec::new(16, hidden, 10, Default::default()).expect("valid spec");
    let params = init_model(&spec, 7);
    TrainingFixture {
        spec,
        params,
        shard: src.examples,
    }
}
