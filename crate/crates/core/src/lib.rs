pub mod constitutive;
pub mod inverse;
pub mod mcmc;
pub mod pipeline;
pub mod prior;
pub mod subspace;
pub mod surrogate;
pub mod tensor;
pub mod triax;
