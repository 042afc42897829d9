import { defineConfig } from "vitest/config";

// tsc emits browser-ready ES modules, so source imports carry ".js" suffixes;
// strip them here so vitest resolves the sibling ".ts" sources directly.
export default defineConfig({
  resolve: {
    alias: [{ find: /^(\.{1,2}\/.*)\.js$/, replacement: "$1" }],
  },
  test: {
    environment: "node",
    include: ["src/**/*.test.ts"],
  },
});
