import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    // the export suite trains a small tfjs model first
    testTimeout: 60_000,
    hookTimeout: 120_000,
  },
});
