//! Image costs used by the search. Lower is better.

use crate::gray::GrayImage;

use super::model::{l2_distance, SiameseModel};
use super::tensor::Tensor;
use super::NnError;

pub trait Metric: Send + Sync {
    fn name(&self) -> &str;

    fn evaluate(&self, render: &GrayImage, target: &GrayImage) -> Result<f64, NnError>;

    /// Fixes the target so repeated evaluations can reuse work done on it.
    /// Costs must be bit-identical to [`Metric::evaluate`].
    fn bind<'a>(&'a self, target: &GrayImage) -> Result<Box<dyn BoundMetric + 'a>, NnError> {
        Ok(Box::new(Unbound {
            metric: self,
            target: target.clone(),
        }))
    }
}

pub trait BoundMetric: Send + Sync {
    fn cost(&self, render: &GrayImage) -> Result<f64, NnError>;
}

struct Unbound<'a, M: ?Sized> {
    metric: &'a M,
    target: GrayImage,
}

impl<M: Metric + ?Sized> BoundMetric for Unbound<'_, M> {
    fn cost(&self, render: &GrayImage) -> Result<f64, NnError> {
        self.metric.evaluate(render, &self.target)
    }
}

pub fn metric_evaluate(metric: &dyn Metric, render: &GrayImage, target: &GrayImage) -> Result<f64, NnError> {
    metric.evaluate(render, target)
}

/// Mean squared pixel difference.
#[derive(Debug, Clone, Copy, Default)]
pub struct MseMetric;

impl Metric for MseMetric {
    fn name(&self) -> &str {
        "mse"
    }

    fn evaluate(&self, render: &GrayImage, target: &GrayImage) -> Result<f64, NnError> {
        if (render.width(), render.height()) != (target.width(), target.height()) {
            return Err(NnError::dimension(
                "mse",
                format!(
                    "render is {}x{}, target is {}x{}",
                    render.width(),
                    render.height(),
                    target.width(),
                    target.height()
                ),
            ));
        }
        let sum: f64 = render
            .pixels()
            .iter()
            .zip(target.pixels())
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        Ok(sum / render.pixels().len() as f64)
    }
}

/// Embedding distance under a trained Siamese model.
#[derive(Debug, Clone)]
pub struct SiameseMetric {
    model: SiameseModel,
}

impl SiameseMetric {
    pub fn new(model: SiameseModel) -> Self {
        SiameseMetric { model }
    }

    pub fn model(&self) -> &SiameseModel {
        &self.model
    }
}

struct BoundSiamese<'a> {
    model: &'a SiameseModel,
    target: Tensor,
}

impl BoundMetric for BoundSiamese<'_> {
    fn cost(&self, render: &GrayImage) -> Result<f64, NnError> {
        Ok(l2_distance(self.model.embed(render)?.data(), self.target.data()))
    }
}

impl Metric for SiameseMetric {
    fn name(&self) -> &str {
        "siamese"
    }

    fn evaluate(&self, render: &GrayImage, target: &GrayImage) -> Result<f64, NnError> {
        self.model.distance(render, target)
    }

    fn bind<'a>(&'a self, target: &GrayImage) -> Result<Box<dyn BoundMetric + 'a>, NnError> {
        Ok(Box::new(BoundSiamese {
            model: &self.model,
            target: self.model.embed(target)?,
        }))
    }
}
