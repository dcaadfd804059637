pub mod agents;
pub mod baseline;
pub mod harness;
pub mod knn;
pub mod nn;
pub mod sim;
pub mod topology;
