import { ApiClient } from "./api.js";
import { TestApp } from "./app.js";

declare global {
  interface Window {
    ADAPTEST_BASE_URL?: string;
    ADAPTEST_SHOW_ESTIMATE?: boolean;
  }
}

function baseUrl(): string {
  if (window.ADAPTEST_BASE_URL) {
    return window.ADAPTEST_BASE_URL;
  }
  const meta = document.querySelector<HTMLMetaElement>('meta[name="adaptest-base-url"]');
  return meta?.content || window.location.origin;
}

const root = document.getElementById("app");
if (root) {
  const app = new TestApp(root, new ApiClient(baseUrl()), {
    showEstimate: window.ADAPTEST_SHOW_ESTIMATE ?? true,
  });
  void app.init();
}
