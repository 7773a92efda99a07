use super::{StepEvents, Task};

/// Per-timestep phase labels for an episode.
///
/// * Sync CN: 0 = no landmark occupied, 1 = some, 2 = all.
/// * Sequential CN: running count of landmark occupations so far.
/// * Swapping CN: 0 = reach, 1 = swap, 2 = reach again.
/// * Waterworld: number of food captures before this step.
/// * CN / PO-CN: a single phase.
pub fn phase_of(events: &[StepEvents], task: Task) -> Vec<u32> {
    match task {
        Task::Cn | Task::PoCn => vec![0; events.len()],
        Task::SyncCn => events
            .iter()
            .map(|e| {
                if e.sync_occupied {
                    2
                } else if e.occupied_count > 0 {
                    1
                } else {
                    0
                }
            })
            .collect(),
        Task::SequentialCn => events
            .iter()
            .scan(0u32, |count, e| {
                *count += e.newly_occupied;
                Some(*count)
            })
            .collect(),
        Task::SwappingCn => events.iter().map(|e| e.swap_phase).collect(),
        Task::Waterworld => events
            .iter()
            .scan(0u32, |captured, e| {
                let label = *captured;
                *captured += e.food_captured;
                Some(label)
            })
            .collect(),
    }
}
