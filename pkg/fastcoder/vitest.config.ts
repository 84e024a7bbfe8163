import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    // The fuzz and bench suites move tens of megabytes per batch; run files
    // one at a time so the throughput comparison is not contended.
    fileParallelism: false,
    testTimeout: 600_000,
  },
});
