//! Benchmarks for the tensor kernels and the model forward/backward pass.
//! See `benches/`.
