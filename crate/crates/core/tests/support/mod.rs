#![allow(dead_code)]

pub mod gradients;
pub mod reference_ssim;
