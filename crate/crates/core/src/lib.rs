pub mod calendar;
pub mod compute;
pub mod model;
pub mod presets;
pub mod protocol;
pub mod topology;

#[cfg(any(test, feature = "testkit"))]
pub mod testkit;
