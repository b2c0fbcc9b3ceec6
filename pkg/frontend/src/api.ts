import type { TransactionDoc } from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: unknown,
  ) {
    super(`HTTP ${status}: ${JSON.stringify(detail)}`);
  }
}

async function asJson(response: Response): Promise<any> {
  const body = await response.json().catch(() => ({}));
  if (!response.ok) {
    throw new ApiError(response.status, (body as any).detail ?? body);
  }
  return body;
}

export class TaskmanClient {
  constructor(public readonly baseUrl: string) {}

  async submitTask(effect: string, precondition?: string | null): Promise<string> {
    const response = await fetch(`${this.baseUrl}/tasks`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ effect, precondition: precondition || null }),
    });
    const body = await asJson(response);
    return body.transactionId as string;
  }

  async listTransactions(): Promise<TransactionDoc[]> {
    return asJson(await fetch(`${this.baseUrl}/transactions`));
  }

  async getTransaction(id: string): Promise<TransactionDoc> {
    return asJson(await fetch(`${this.baseUrl}/transactions/${id}`));
  }

  async cancelTransaction(id: string): Promise<void> {
    await asJson(await fetch(`${this.baseUrl}/transactions/${id}/cancel`, { method: "POST" }));
  }

  async health(): Promise<boolean> {
    try {
      const response = await fetch(`${this.baseUrl}/health`);
      return response.ok;
    } catch {
      return false;
    }
  }
}
