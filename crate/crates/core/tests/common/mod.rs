#![allow(dead_code)]

pub mod gradcheck;
pub mod nms_oracle;
