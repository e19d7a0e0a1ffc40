//! Speech auto-encoders with instance-normalization and sliced
//! vector-quantization bottlenecks, the MFCC front end they consume, and the
//! ABX and bit-rate metrics used to score their content codes.

pub mod bottlenecks;
pub mod eval;
pub mod features;
pub mod models;
pub mod numerics;
pub mod synth;
