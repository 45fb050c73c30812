import { defineConfig } from "vitest/config";

// Every binding call spawns the engine CLI; give the suites generous
// timeouts so the 1000-vector parity run has room on slow machines.
export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    testTimeout: 180_000,
    hookTimeout: 180_000,
  },
});
