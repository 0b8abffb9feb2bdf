use dpfed_core::dp::ClientUpdate;
use dpfed_core::federation::ClientExecutor;
use dpfed_core::Result;
use rayon::prelude::*;

/// Runs client updates on a dedicated rayon pool.
pub struct ThreadPoolExecutor {
    pool: rayon::ThreadPool,
}

impl ThreadPoolExecutor {
    pub fn new(workers: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .expect("failed to start worker threads");
        Self { pool }
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl ClientExecutor for ThreadPoolExecutor {
    fn run(
        &self,
        clients: &[u32],
        job: &(dyn Fn(u32) -> Result<ClientUpdate> + Sync),
    ) -> Vec<Result<ClientUpdate>> {
        self.pool
            .install(|| clients.par_iter().map(|&k| job(k)).collect())
    }
}
