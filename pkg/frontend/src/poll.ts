// Job polling with a floor on the interval: at most one status request per
// second per job, growing gently while the job stays queued.

import type { JobInfo } from "./types.js";

export interface PollOptions {
  minIntervalMs?: number;
  maxIntervalMs?: number;
  timeoutMs?: number;
  onUpdate?: (job: JobInfo) => void;
}

export const MIN_POLL_INTERVAL_MS = 1000;

export function nextInterval(current: number, maxIntervalMs: number): number {
  return Math.min(Math.round(current * 1.5), maxIntervalMs);
}

export async function pollJob(
  getJob: (jobId: string) => Promise<JobInfo>,
  jobId: string,
  options: PollOptions = {},
): Promise<JobInfo> {
  const min = Math.max(options.minIntervalMs ?? MIN_POLL_INTERVAL_MS, MIN_POLL_INTERVAL_MS);
  const max = options.maxIntervalMs ?? 5000;
  const timeout = options.timeoutMs ?? 10 * 60 * 1000;
  let interval = min;
  const started = Date.now();

  // First check immediately; afterwards never faster than the interval floor.
  for (;;) {
    const job = await getJob(jobId);
    options.onUpdate?.(job);
    if (job.status === "done") return job;
    if (job.status === "failed") throw new Error(job.error ?? `job ${jobId} failed`);
    if (Date.now() - started > timeout) throw new Error(`job ${jobId} timed out`);
    await new Promise((resolve) => setTimeout(resolve, interval));
    interval = job.status === "queued" ? nextInterval(interval, max) : min;
  }
}
