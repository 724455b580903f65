//! Differentiable core and the actor/critic networks.

pub mod autodiff;
pub mod optim;
pub mod policy;

pub use autodiff::{Graph, Tensor, Var};
pub use optim::{clip_grad_norm, Adam};
pub use policy::{sample_talents, Actor, ActorOutput, Critic, NetConfig, ObsVars, ParamSet, TalentDraw};
