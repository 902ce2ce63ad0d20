//! Minimal CPU convolutional network engine: tensors, layers with hand-written
//! backward passes, the encoder-decoder and patch-discriminator topologies,
//! and Adam.

pub mod adam;
pub mod layers;
pub mod patchgan;
pub mod tensor;
pub mod unet;

pub use adam::{Adam, AdamConfig};
pub use layers::{ConvGeom, Param};
pub use patchgan::{PatchGan, PatchGanSpec, PatchGanTrace};
pub use tensor::{Real, Tensor};
pub use unet::{Head, NormKind, UNet, UNetSpec, UNetTrace};

/// Copies every parameter value into one flat `f64` vector.
pub fn flatten_params<'a, T: Real>(params: impl IntoIterator<Item = &'a Param<T>>) -> Vec<f64> {
    params
        .into_iter()
        .flat_map(|p| p.value.iter().map(|v| v.to_f64()))
        .collect()
}

/// Inverse of [`flatten_params`] for a parameter list of the same layout.
pub fn load_flat<T: Real>(params: Vec<&mut Param<T>>, flat: &[f64]) {
    let mut it = flat.iter();
    for p in params {
        for v in p.value.iter_mut() {
            *v = T::from_f64(*it.next().expect("flat parameter vector too short"));
        }
    }
    assert!(it.next().is_none(), "flat parameter vector too long");
}
