//! Models that regress the label β from a sample.

pub mod dos;
pub mod nn;

use crate::dataset::Sample;
use crate::error::Result;

pub use dos::{dos_build, DensityOfStates, DosModel, DosPrediction};
pub use nn::{
    ensemble_train, nn_train, Architecture, LabelScaler, LayerSpec, LossHistory, NeuralNet, Shape, TrainConfig,
};

pub trait BetaPredictor: Sync {
    fn predict(&self, sample: &Sample) -> Result<f64>;

    fn predict_many(&self, samples: &[&Sample]) -> Result<Vec<f64>> {
        samples.iter().map(|s| self.predict(s)).collect()
    }
}

impl<F> BetaPredictor for F
where
    F: Fn(&Sample) -> f64 + Sync,
{
    fn predict(&self, sample: &Sample) -> Result<f64> {
        Ok(self(sample))
    }
}
