import { defineConfig } from "vitest/config";

export default defineConfig({
  server: {
    // dev only: the voting service runs separately on its default port
    proxy: { "/api": "http://127.0.0.1:8040" },
  },
  test: {
    environment: "happy-dom",
  },
});
