//! Model containers: the trainable discrete-selection model, and the
//! "compiled" inference form (one complex modulation per layer) that every
//! evaluation path shares, so accuracy comparisons between methods are
//! apples-to-apples by construction.

use ndarray::{Array2, Array3};
use num_complex::Complex;

use crate::device::DeviceResponseTable;
use crate::error::{DonnError, Result};
use crate::gumbel::{build_modulation, gumbel_softmax, GumbelNoise, SelectMode, SelectionPath};
use crate::optics::{make_transfer_function, DetectorLayout, PropagationConfig, TransferFunction};
use crate::real::Real;

/// Per-layer trainable parameters: logits over the device's discrete levels.
#[derive(Debug, Clone)]
pub struct ModulationLayerParams<T: Real> {
    pub logits: Array3<T>,
    pub device: DeviceResponseTable,
}

impl<T: Real> ModulationLayerParams<T> {
    /// All-zero logits: a uniform prior over levels.
    pub fn zeros(n: usize, device: DeviceResponseTable) -> Self {
        Self {
            logits: Array3::zeros((n, n, device.levels())),
            device,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let (r, c, k) = self.logits.dim();
        if r != n || c != n {
            return Err(DonnError::ShapeMismatch(format!(
                "layer logits are {r}x{c} but the model grid is {n}x{n}"
            )));
        }
        if k != self.device.levels() {
            return Err(DonnError::ShapeMismatch(format!(
                "layer has {k} levels but its device table has {}",
                self.device.levels()
            )));
        }
        if self.logits.iter().any(|x| !x.is_finite()) {
            return Err(DonnError::NonFinite("layer logits".into()));
        }
        Ok(())
    }
}

/// The L-layer discrete-selection model. One uniform inter-plane distance is
/// used for source -> layer 1, layer i -> layer i+1, and layer L -> detector.
#[derive(Debug, Clone)]
pub struct DonnModel<T: Real> {
    pub layers: Vec<ModulationLayerParams<T>>,
    pub optics: PropagationConfig,
    pub detector: DetectorLayout,
}

impl<T: Real> DonnModel<T> {
    /// Fresh model with zero logits on every layer.
    pub fn new(
        optics: PropagationConfig,
        detector: DetectorLayout,
        devices: Vec<DeviceResponseTable>,
    ) -> Result<Self> {
        optics.validate()?;
        detector.validate_against(optics.grid_size)?;
        if devices.is_empty() {
            return Err(DonnError::Config("model needs at least one layer".into()));
        }
        let n = optics.grid_size;
        let layers = devices
            .into_iter()
            .map(|d| ModulationLayerParams::zeros(n, d))
            .collect();
        Ok(Self {
            layers,
            optics,
            detector,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.optics.validate()?;
        self.detector.validate_against(self.optics.grid_size)?;
        if self.layers.is_empty() {
            return Err(DonnError::Config("model needs at least one layer".into()));
        }
        for l in &self.layers {
            l.validate(self.optics.grid_size)?;
        }
        Ok(())
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    #[inline]
    pub fn grid_size(&self) -> usize {
        self.optics.grid_size
    }

    /// Noise-free hard selections per layer (argmax of logits).
    pub fn inference_selections(&self) -> Result<Vec<Array2<usize>>> {
        self.layers
            .iter()
            .map(|layer| {
                let k = layer.device.levels();
                let sel = gumbel_softmax(
                    &layer.logits,
                    &GumbelNoise::zeros(self.grid_size(), k),
                    T::one(),
                    SelectMode::Inference,
                )?;
                Ok(sel.hard)
            })
            .collect()
    }

    /// Compiles to the deployable form: one device-representable complex
    /// modulation per layer, selected by noise-free argmax.
    pub fn compile(&self) -> Result<CompiledModel<T>> {
        self.validate()?;
        let mods = self
            .layers
            .iter()
            .map(|layer| {
                let k = layer.device.levels();
                let sel = gumbel_softmax(
                    &layer.logits,
                    &GumbelNoise::zeros(self.grid_size(), k),
                    T::one(),
                    SelectMode::Inference,
                )?;
                build_modulation(&sel, &layer.device, SelectionPath::Hard)
            })
            .collect::<Result<Vec<_>>>()?;
        CompiledModel::new(mods, self.optics.clone(), self.detector.clone())
    }
}

/// Frozen inference model: per-layer complex modulations plus optics. Every
/// evaluation routine (accuracy, confidence, dumps) runs through this type.
#[derive(Debug, Clone)]
pub struct CompiledModel<T: Real> {
    pub modulations: Vec<Array2<Complex<T>>>,
    pub optics: PropagationConfig,
    pub detector: DetectorLayout,
    pub transfer: TransferFunction<T>,
}

impl<T: Real> CompiledModel<T> {
    pub fn new(
        modulations: Vec<Array2<Complex<T>>>,
        optics: PropagationConfig,
        detector: DetectorLayout,
    ) -> Result<Self> {
        optics.validate()?;
        detector.validate_against(optics.grid_size)?;
        let n = optics.grid_size;
        for (i, m) in modulations.iter().enumerate() {
            if m.dim() != (n, n) {
                return Err(DonnError::ShapeMismatch(format!(
                    "modulation {i} is {:?} but the grid is {n}x{n}",
                    m.dim()
                )));
            }
        }
        let transfer = make_transfer_function(&optics)?;
        Ok(Self {
            modulations,
            optics,
            detector,
            transfer,
        })
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.modulations.len()
    }
}
