import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    testTimeout: 30_000,
    hookTimeout: 60_000,
    // The integration suite spawns one backend; keep files sequential so
    // ports and transactions do not interleave.
    fileParallelism: false,
  },
});
