// Spawns the real task-manager backend (combined system over HTTP) for
// integration tests, on a free port, paced so executions take visible time.

import { spawn, ChildProcess } from "node:child_process";
import net from "node:net";
import path from "node:path";
import { fileURLToPath } from "node:url";

const REPO_ROOT = path.resolve(path.dirname(fileURLToPath(import.meta.url)), "..", "..");
const SCENARIO_CONFIG = path.join(REPO_ROOT, "src", "taskfleet", "scenarios", "scenario1.yaml");

async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = net.createServer();
    probe.listen(0, "127.0.0.1", () => {
      const port = (probe.address() as net.AddressInfo).port;
      probe.close((err) => (err ? reject(err) : resolve(port)));
    });
  });
}

export interface Backend {
  baseUrl: string;
  stop: () => Promise<void>;
}

export async function startBackend(options: { realtime?: number } = {}): Promise<Backend> {
  const port = await freePort();
  const child: ChildProcess = spawn(
    "python3",
    [
      "-m",
      "taskfleet.cli",
      "serve",
      "all",
      "--config",
      SCENARIO_CONFIG,
      "--http",
      `127.0.0.1:${port}`,
      "--realtime",
      String(options.realtime ?? 0.05),
    ],
    { cwd: REPO_ROOT, stdio: ["ignore", "pipe", "pipe"] },
  );
  const stderr: string[] = [];
  child.stderr?.on("data", (chunk) => stderr.push(String(chunk)));
  const baseUrl = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 30_000;
  for (;;) {
    if (child.exitCode !== null) {
      throw new Error(`backend exited early: ${stderr.join("")}`);
    }
    try {
      const response = await fetch(`${baseUrl}/health`);
      if (response.ok) {
        break;
      }
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      child.kill("SIGKILL");
      throw new Error(`backend did not come up: ${stderr.join("")}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 150));
  }
  return {
    baseUrl,
    stop: () =>
      new Promise((resolve) => {
        child.once("exit", () => resolve());
        child.kill("SIGTERM");
        setTimeout(() => child.kill("SIGKILL"), 5000).unref();
      }),
  };
}
