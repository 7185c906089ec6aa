import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    // the round-trip suite boots the Python service in a child process
    testTimeout: 60_000,
    hookTimeout: 60_000,
  },
});
