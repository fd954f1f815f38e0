use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("point ({x:.3}, {y:.3}) lies outside the {width}x{height} grid")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("unknown robot `{0}`")]
    UnknownRobot(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MappingError {
    #[error("sensor origin ({x:.3}, {y:.3}) lies outside the map and auto-grow is disabled")]
    PoseOutsideGrid { x: f64, y: f64 },
    #[error("malformed grid snapshot: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MergeError {
    #[error("robot `{0}` has no spawn transform")]
    MissingTransform(String),
    #[error("raster has {occupied} occupied cells; at least {required} are needed to register")]
    DegenerateInput { occupied: usize, required: usize },
    #[error("rasters differ in size: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NavError {
    #[error("no path to goal")]
    NoPath,
    #[error("goal lies inside an inflated obstacle")]
    GoalInObstacle,
    #[error("start lies inside an obstacle")]
    StartInObstacle,
    #[error("pose lies outside the map")]
    OutsideMap,
    #[error("elastic band severed between waypoints {0} and {1}")]
    BandSevered(usize, usize),
    #[error("plan has no waypoints")]
    EmptyPlan,
    #[error("no progress toward the goal for {0:.1} s")]
    Stuck(f64),
    #[error("timed out after {0:.1} s")]
    Timeout(f64),
    #[error("waypoint leg {leg} failed: {source}")]
    LegFailed {
        leg: usize,
        #[source]
        source: Box<NavError>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FleetError {
    #[error("unknown robot `{0}`")]
    UnknownRobot(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("unknown tag {0}")]
    UnknownTag(u32),
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("unknown task {0}")]
    UnknownTask(u64),
    #[error("malformed frame: {0}")]
    Frame(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("unknown robot `{0}`")]
    UnknownRobot(String),
    #[error("robot `{robot}` is under teleop by session {holder}")]
    TeleopDenied { robot: String, holder: u64 },
    #[error("this session holds no teleop claim on `{0}`")]
    NotClaimed(String),
    #[error(transparent)]
    Fleet(#[from] FleetError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {col}: {message}")]
    Parse { line: usize, col: usize, message: String },
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("cannot read scenario: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("script line {line}: {message}")]
    Script { line: usize, message: String },
    #[error("record line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("timed out after {ticks} ticks with {found} of {total} tags found")]
    Timeout {
        ticks: u64,
        found: usize,
        total: usize,
        record: Box<crate::record::RunRecord>,
    },
}
