//! Seeded image augmentation and dataset expansion.

mod expand;
mod image;
mod transforms;

pub use expand::{expand_dataset, materialize, render_augmented, AugmentationSpec, TransformSpec};
pub use image::{ImageBuffer, CHANNELS};
pub use transforms::{
    adjust_brightness, adjust_exposure, apply_recipe, flip_horizontal, flip_vertical, gaussian_blur, gaussian_kernel,
    salt_pepper, salt_pepper_count, AppliedTransform, BLUR_SIGMA_LIMIT, BRIGHTNESS_LIMIT, EXPOSURE_LIMIT,
    SALT_PEPPER_FRACTION,
};
